"""Imitation dataset built from grid-search demonstrations, plus the training
loop that fits the sampler model with MSE on next-waypoint prediction.

A demonstration is the optimal grid path for a random environment; every
prefix of it yields one training sample whose target is the following
waypoint.  Loss is computed in normalized ([0, 1] per axis) coordinates.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import grid_oracle
from .env import (CostMap, Environment, generate_random_env, is_free_segment,
                  load_costmap, point_to_cell, rasterize, save_costmap)
from .model import SamplerModel, cells_of
from .nn.optim import Adam
from .nn import functional as F
from .nn.tensor import Tensor, no_grad, set_default_dtype

DATASET_VERSION = "ds-v1"

ENV_SPEC_2D = dict(dim=2, size=(100.0, 100.0), obstacle_count_range=(16, 20),
                   radius_range=(0.0, 12.0))
ENV_SPEC_3D = dict(dim=3, size=(50.0, 50.0, 50.0), obstacle_count_range=(6, 10),
                   radius_range=(0.0, 8.0))


def env_spec_for(dim: int) -> dict:
    if dim == 2:
        return dict(ENV_SPEC_2D)
    if dim == 3:
        return dict(ENV_SPEC_3D)
    raise ValueError("dim must be 2 or 3")


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 2
    env_count: int = 500
    batch_size: int = 256          # 128 for 3D per the experimental settings
    epochs: int = 20
    lr: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.1
    # std-dev of Gaussian noise added to prefix waypoints during training.
    # Demonstration prefixes lie exactly on the search lattice, while planner
    # rollouts feed back the model's own (imperfect) nodes; the noise closes
    # that gap so predictions stay on target when the prefix is off-lattice.
    jitter: float = 0.0
    # demonstration waypoints sit on adjacent grid cells (~1 apart), while the
    # planner extends the tree by a full step (~4) per added node.  A stride
    # of k forms prefixes and targets from every k-th waypoint so the spacing
    # of the training tuples matches the spacing the sampler sees at planning
    # time; each path position still contributes one sample (offset chains).
    stride: int = 3

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class TrainingSample:
    env_id: int
    n: int
    prefix: np.ndarray      # (n, d) waypoints, first is the path start
    target: np.ndarray      # (d,) next waypoint
    goal: np.ndarray
    start: np.ndarray


@dataclass
class Dataset:
    dim: int
    map_dims: tuple[int, ...]
    samples: list[TrainingSample]
    costmaps: dict[int, CostMap]

    def __len__(self) -> int:
        return len(self.samples)

    def env_ids(self) -> list[int]:
        return sorted(self.costmaps)


def _demonstrate(env: Environment, cmap: CostMap) -> Optional[list[np.ndarray]]:
    s = point_to_cell(cmap, env.start)
    g = point_to_cell(cmap, env.goal)
    if cmap.cells[s] or cmap.cells[g]:
        return None
    path = grid_oracle.astar(cmap, s, g)
    if path is None or len(path.cells) < 2:
        return None
    return [np.asarray(w) for w in grid_oracle.to_waypoints(path)]


def build_dataset(config: TrainConfig, out_dir: str) -> str:
    """Generate environments, run the demonstration search and write the
    ds-v1 dataset (records file plus one cost-map file per environment)."""
    spec = env_spec_for(config.dim)
    os.makedirs(os.path.join(out_dir, "maps"), exist_ok=True)
    seed_rng = np.random.default_rng(config.seed)
    records = []
    env_ids = []
    attempts = 0
    built = 0
    while built < config.env_count:
        attempts += 1
        if attempts > config.env_count * 20:
            raise RuntimeError("too many unsolvable environments; check generation spec")
        env_seed = int(seed_rng.integers(0, 2**31 - 1))
        try:
            env = generate_random_env(seed=env_seed, **spec)
        except RuntimeError:
            continue
        cmap = rasterize(env)
        waypoints = _demonstrate(env, cmap)
        if waypoints is None:
            continue
        env_id = built
        save_costmap(cmap, os.path.join(out_dir, "maps", f"env{env_id}.cm"))
        for n in range(1, len(waypoints)):
            idx = list(range(n % config.stride, n, config.stride))
            if not idx or idx[0] != 0:
                idx = [0] + idx
            prefix = [waypoints[i] for i in idx]
            # the corner-cut rule makes adjacent waypoints connectable, but a
            # strided hop (or a sub-cell obstacle) can clip the straight
            # segment to the target; verify and drop offending pairs
            if not is_free_segment(env, tuple(prefix[-1]), tuple(waypoints[n])):
                continue
            records.append({
                "env": env_id, "n": n,
                "prefix": [list(map(float, w)) for w in prefix],
                "target": list(map(float, waypoints[n])),
                "goal": list(map(float, env.goal)),
                "start": list(map(float, env.start)),
            })
        env_ids.append(env_id)
        built += 1
    header = {
        "version": DATASET_VERSION, "dim": config.dim,
        "map_dims": [int(round(s)) for s in spec["size"]],
        "env_count": built, "sample_count": len(records),
    }
    path = os.path.join(out_dir, "dataset.jsonl")
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def load_dataset(path: str) -> Dataset:
    base = os.path.dirname(path)
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {header.get('version')!r}")
        samples = []
        for line in fh:
            rec = json.loads(line)
            samples.append(TrainingSample(
                env_id=rec["env"], n=rec["n"],
                prefix=np.asarray(rec["prefix"], dtype=float),
                target=np.asarray(rec["target"], dtype=float),
                goal=np.asarray(rec["goal"], dtype=float),
                start=np.asarray(rec["start"], dtype=float),
            ))
    costmaps = {}
    for env_id in sorted({s.env_id for s in samples}):
        costmaps[env_id] = load_costmap(os.path.join(base, "maps", f"env{env_id}.cm"))
    return Dataset(dim=header["dim"], map_dims=tuple(header["map_dims"]),
                   samples=samples, costmaps=costmaps)


# ---------------------------------------------------------------------------
# batching

def _batch_arrays(model: SamplerModel, samples: Sequence[TrainingSample],
                  costmaps: dict[int, CostMap]):
    """Assemble one mini-batch: coords, patch-conv features, masks, targets."""
    cfg = model.config
    max_nodes = cfg.max_seq_len - 2
    seqs = []
    for s in samples:
        prefix = s.prefix[-max_nodes:]
        seqs.append(np.concatenate([s.goal[None], s.start[None], prefix], axis=0))
    s_max = max(len(q) for q in seqs)
    b = len(samples)
    coords = np.zeros((b, s_max, cfg.d_space))
    valid = np.zeros((b, s_max), dtype=bool)
    last_idx = np.zeros(b, dtype=int)
    flat_cells = []
    which = []
    map_index = {}
    maps = []
    gather = np.zeros((b, s_max), dtype=int)
    t = 0
    for i, (s, q) in enumerate(zip(samples, seqs)):
        n = len(q)
        coords[i, :n] = q
        valid[i, :n] = True
        last_idx[i] = n - 1
        if s.env_id not in map_index:
            map_index[s.env_id] = len(maps)
            maps.append(costmaps[s.env_id])
        cells = cells_of(q, cfg.map_dims)
        for c in cells:
            flat_cells.append(c)
            which.append(map_index[s.env_id])
        gather[i, :n] = np.arange(t, t + n)
        t += n
    targets = np.stack([s.target for s in samples]) / np.asarray(cfg.map_dims, dtype=float)
    return coords, valid, last_idx, np.asarray(flat_cells), np.asarray(which), maps, gather, targets


MAX_BATCH_TOKENS = 4096  # caps the per-batch feature graph memory


def _carve(indices, samples: Sequence[TrainingSample], batch_size: int,
           max_tokens: int) -> list[np.ndarray]:
    """Split length-sorted indices into batches bounded by sample count and
    by total token count (patch-feature memory scales with total tokens)."""
    batches = []
    cur: list[int] = []
    tokens = 0
    for i in indices:
        n = samples[i].n + 2
        if cur and (len(cur) >= batch_size or tokens + n > max_tokens):
            batches.append(np.asarray(cur))
            cur, tokens = [], 0
        cur.append(i)
        tokens += n
    if cur:
        batches.append(np.asarray(cur))
    return batches


def _bucketed_batches(order: np.ndarray, samples: Sequence[TrainingSample],
                      batch_size: int, rng) -> list[np.ndarray]:
    """Carve shuffled indices into mini-batches of similar sequence length.

    Padding every batch to its longest member makes attention cost scale with
    the square of the longest prefix, so mixing 5-token and 110-token prefixes
    wastes most of the compute.  Sorting by length inside windows of several
    batches keeps batches near-homogeneous while the window shuffle and the
    final batch shuffle preserve stochasticity.  Deterministic given rng.
    """
    window = batch_size * 8
    batches = []
    for lo in range(0, len(order), window):
        win = sorted(order[lo:lo + window], key=lambda i: samples[i].n)
        batches.extend(_carve(win, samples, batch_size, MAX_BATCH_TOKENS))
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def _batch_loss(model: SamplerModel, samples, costmaps) -> Tensor:
    coords, valid, last_idx, cells, which, maps, gather, targets = _batch_arrays(
        model, samples, costmaps)
    feats_flat = model.patch_features(maps, cells, which)  # (T, d_model)
    feats = feats_flat[gather] * Tensor(valid[..., None].astype(float))
    pred = model.forward_batch(coords, feats, valid, last_idx)
    return F.mse_loss(pred, Tensor(targets))


def _split_by_env(dataset: Dataset, val_fraction: float, rng) -> tuple[list, list]:
    env_ids = dataset.env_ids()
    order = rng.permutation(len(env_ids))
    n_val = int(round(len(env_ids) * val_fraction))
    val_envs = {env_ids[i] for i in order[:n_val]}
    train = [s for s in dataset.samples if s.env_id not in val_envs]
    val = [s for s in dataset.samples if s.env_id in val_envs]
    return train, val


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)


def train(dataset: Dataset, model: SamplerModel, config: TrainConfig,
          log=None) -> TrainReport:
    """Adam over shuffled mini-batches; records per-epoch train/val MSE."""
    if not dataset.samples:
        raise ValueError("dataset is empty")
    if dataset.dim != model.config.d_space:
        raise ValueError(
            f"dataset dimensionality {dataset.dim} does not match model "
            f"d_space {model.config.d_space}")
    rng = np.random.default_rng(config.seed)
    train_samples, val_samples = _split_by_env(dataset, config.val_fraction, rng)
    if not train_samples:
        train_samples = list(dataset.samples)
    # single precision roughly halves step time and memory; the float64
    # default stays in place for gradient checking
    prev_dtype = set_default_dtype(np.float32)
    for p in model.parameters():
        p.data = p.data.astype(np.float32)
    try:
        opt = Adam(model.parameters(), lr=config.lr)
        report = TrainReport()
        best_val = math.inf
        best_state = None
        for epoch in range(config.epochs):
            order = rng.permutation(len(train_samples))
            total = 0.0
            nb = 0
            for batch_idx in _bucketed_batches(order, train_samples,
                                               config.batch_size, rng):
                batch = [train_samples[i] for i in batch_idx]
                if config.jitter > 0.0:
                    batch = [replace(s, prefix=s.prefix + rng.normal(
                        0.0, config.jitter, s.prefix.shape)) for s in batch]
                loss = _batch_loss(model, batch, dataset.costmaps)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item()
                nb += 1
            train_loss = total / nb
            report.train_losses.append(train_loss)
            if val_samples:
                val_mse = evaluate_mse(model, val_samples, dataset.costmaps,
                                       config.batch_size)
                report.val_losses.append(val_mse)
                if val_mse < best_val:
                    best_val = val_mse
                    best_state = [p.data.copy() for p in model.parameters()]
            if log is not None:
                vtxt = f" val={report.val_losses[-1]:.6f}" if val_samples else ""
                log(f"epoch {epoch + 1}/{config.epochs} train={train_loss:.6f}{vtxt}")
        # keep the best-validation checkpoint as the returned model
        if best_state is not None:
            for p, data in zip(model.parameters(), best_state):
                p.data = data
    finally:
        set_default_dtype(prev_dtype)
        for p in model.parameters():
            p.data = p.data.astype(prev_dtype)
            p.grad = None
    return report


def evaluate_mse(model: SamplerModel, samples, costmaps, batch_size: int = 256) -> float:
    total = 0.0
    count = 0
    samples = list(samples)
    by_len = sorted(range(len(samples)), key=lambda i: samples[i].n)
    with no_grad():
        for batch_idx in _carve(by_len, samples, batch_size, MAX_BATCH_TOKENS):
            batch = [samples[i] for i in batch_idx]
            loss = _batch_loss(model, batch, costmaps)
            total += loss.item() * len(batch)
            count += len(batch)
    return total / count


def evaluate(dataset_or_samples, model: SamplerModel,
             costmaps: Optional[dict[int, CostMap]] = None,
             batch_size: int = 256) -> dict:
    """MSE (normalized units) and mean next-node Euclidean error (map units)."""
    if isinstance(dataset_or_samples, Dataset):
        samples = dataset_or_samples.samples
        costmaps = dataset_or_samples.costmaps
    else:
        samples = list(dataset_or_samples)
        if costmaps is None:
            raise ValueError("costmaps required when passing raw samples")
    size = np.asarray(model.config.map_dims, dtype=float)
    sq_err = 0.0
    euc = 0.0
    samples = sorted(samples, key=lambda s: s.n)  # minimal padding per batch
    by_len = list(range(len(samples)))
    with no_grad():
        for batch_idx in _carve(by_len, samples, batch_size, MAX_BATCH_TOKENS):
            batch = [samples[i] for i in batch_idx]
            coords, valid, last_idx, cells, which, maps, gather, targets = _batch_arrays(
                model, batch, costmaps)
            feats_flat = model.patch_features(maps, cells, which)
            feats = feats_flat[gather] * Tensor(valid[..., None].astype(float))
            pred = model.forward_batch(coords, feats, valid, last_idx).data
            sq_err += float(((pred - targets) ** 2).mean() * len(batch))
            denorm = np.clip(pred * size, 0.0, size)
            euc += float(np.linalg.norm(denorm - targets * size, axis=1).sum())
    n = len(samples)
    return {"mse": sq_err / n, "mean_next_node_error": euc / n}


def copy_last_baseline(samples) -> float:
    """Mean distance from each prefix's final waypoint to its target: the
    error of a predictor that just repeats the last node."""
    return float(np.mean([np.linalg.norm(s.target - s.prefix[-1]) for s in samples]))
