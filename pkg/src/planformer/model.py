"""The learned sampler: CNN feature extractor, transformer encoder and the
hybrid (uniform / model-guided) sampling rule.

Tokens are built from the goal, the start and the tree nodes in insertion
order.  Each token adds three ingredients: a linear embedding of the
normalized coordinates, the feature-map vector at the node's grid cell and
a sinusoidal positional encoding of the raw coordinates.  The encoder
output at the last real token feeds a linear head that predicts the next
sample location in normalized coordinates.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import CostMap, Environment, rasterize
from .nn import functional as F
from .nn.serialize import WeightFormatError, load_tensors, save_tensors
from .nn.tensor import Tensor, no_grad
from .planner import Point, Tree, within_goal

# receptive field of three stacked 3x3 convolutions is 7; a patch of that
# size around a cell reproduces the full-map feature at its center
CONV_LAYERS = 3
PATCH = 7
PATCH_PAD = 3

should_stop = within_goal


@dataclass(frozen=True)
class ModelConfig:
    d_space: int = 2
    d_model: int = 64
    n_head: int = 6
    head_dim: int = 16
    n_layers: int = 6
    d_ff: int = 448
    max_seq_len: int = 256
    map_dims: tuple[int, ...] = (100, 100)
    conv_channels: tuple[int, int] = (16, 32)

    def __post_init__(self):
        if self.d_space not in (2, 3):
            raise ValueError("d_space must be 2 or 3")
        if len(self.map_dims) != self.d_space:
            raise ValueError("map_dims rank must equal d_space")

    def to_dict(self) -> dict:
        return {
            "d_space": self.d_space, "d_model": self.d_model, "n_head": self.n_head,
            "head_dim": self.head_dim, "n_layers": self.n_layers, "d_ff": self.d_ff,
            "max_seq_len": self.max_seq_len, "map_dims": list(self.map_dims),
            "conv_channels": list(self.conv_channels),
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            d_space=int(d["d_space"]), d_model=int(d["d_model"]), n_head=int(d["n_head"]),
            head_dim=int(d["head_dim"]), n_layers=int(d["n_layers"]), d_ff=int(d["d_ff"]),
            max_seq_len=int(d["max_seq_len"]), map_dims=tuple(int(x) for x in d["map_dims"]),
            conv_channels=tuple(int(x) for x in d["conv_channels"]),
        )


class SamplerModel:
    """All learnable parameters plus the forward passes that use them."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._feature_cache: "OrderedDict[bytes, np.ndarray]" = OrderedDict()
        rng = np.random.default_rng(seed)
        self._init_params(rng)

    # -- parameters ---------------------------------------------------------

    def _add(self, name: str, shape: tuple[int, ...], rng, fan_in: int, fan_out: int,
             fill: Optional[float] = None) -> None:
        if fill is not None:
            data = np.full(shape, fill)
        else:
            a = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-a, a, size=shape)
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    def _init_params(self, rng) -> None:
        cfg = self.config
        rank = cfg.d_space
        k = (3,) * rank
        kn = 3 ** rank
        chans = (1,) + cfg.conv_channels + (cfg.d_model,)
        for i in range(CONV_LAYERS):
            c_in, c_out = chans[i], chans[i + 1]
            self._add(f"conv{i}_w", (c_out, c_in) + k, rng, c_in * kn, c_out * kn)
            self._add(f"conv{i}_b", (c_out,), rng, 0, 0, fill=0.0)
        dm = cfg.d_model
        proj = cfg.n_head * cfg.head_dim
        self._add("embed_w", (cfg.d_space, dm), rng, cfg.d_space, dm)
        # Xavier on a 2-3 wide input leaves the coordinate signal an order of
        # magnitude below the other token components; rescale to unit output
        self._add("embed_b", (dm,), rng, 0, 0, fill=0.0)
        self.params["embed_w"].data *= 8.0
        # residual-branch output projections start small so the stream stays
        # near its input early on; markedly faster convergence at a fixed
        # step budget
        res_scale = 1.0 / (4.0 * cfg.n_layers)
        for i in range(cfg.n_layers):
            p = f"layer{i}_"
            for nm in ("q", "k", "v"):
                self._add(p + f"w{nm}", (dm, proj), rng, dm, proj)
                self._add(p + f"b{nm}", (proj,), rng, 0, 0, fill=0.0)
            self._add(p + "wo", (proj, dm), rng, proj, dm)
            self.params[p + "wo"].data *= res_scale
            self._add(p + "bo", (dm,), rng, 0, 0, fill=0.0)
            self._add(p + "ln1_g", (dm,), rng, 0, 0, fill=1.0)
            self._add(p + "ln1_b", (dm,), rng, 0, 0, fill=0.0)
            self._add(p + "ff1_w", (dm, cfg.d_ff), rng, dm, cfg.d_ff)
            self._add(p + "ff1_b", (cfg.d_ff,), rng, 0, 0, fill=0.0)
            self._add(p + "ff2_w", (cfg.d_ff, dm), rng, cfg.d_ff, dm)
            self.params[p + "ff2_w"].data *= res_scale
            self._add(p + "ff2_b", (dm,), rng, 0, 0, fill=0.0)
            self._add(p + "ln2_g", (dm,), rng, 0, 0, fill=1.0)
            self._add(p + "ln2_b", (dm,), rng, 0, 0, fill=0.0)
        self._add("head_w", (dm, cfg.d_space), rng, dm, cfg.d_space)
        self._add("head_b", (cfg.d_space,), rng, 0, 0, fill=0.0)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- forward passes ------------------------------------------------------

    def conv_stack(self, x: Tensor, padding: int) -> Tensor:
        for i in range(CONV_LAYERS):
            x = F.conv(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"],
                       padding=padding).relu()
        return x

    def encode(self, tokens: Tensor, valid: np.ndarray) -> Tensor:
        """Transformer encoder: tokens (B, S, d_model), valid (B, S) bool."""
        cfg = self.config
        x = tokens
        for i in range(cfg.n_layers):
            p = f"layer{i}_"
            a = F.multi_head_attention(
                x, x,
                self.params[p + "wq"], self.params[p + "bq"],
                self.params[p + "wk"], self.params[p + "bk"],
                self.params[p + "wv"], self.params[p + "bv"],
                self.params[p + "wo"], self.params[p + "bo"],
                cfg.n_head, cfg.head_dim, key_mask=valid)
            x = F.layer_norm(x + a, self.params[p + "ln1_g"], self.params[p + "ln1_b"])
            h = F.linear(x, self.params[p + "ff1_w"], self.params[p + "ff1_b"]).relu()
            h = F.linear(h, self.params[p + "ff2_w"], self.params[p + "ff2_b"])
            x = F.layer_norm(x + h, self.params[p + "ln2_g"], self.params[p + "ln2_b"])
        return x

    def head(self, x: Tensor) -> Tensor:
        return F.linear(x, self.params["head_w"], self.params["head_b"])

    def embed_tokens(self, coords: np.ndarray, feats: Tensor) -> Tensor:
        """coords: (B, S, d_space) raw map units; feats: (B, S, d_model)."""
        size = np.asarray(self.config.map_dims, dtype=float)
        emb = F.linear(Tensor(coords / size), self.params["embed_w"], self.params["embed_b"])
        pe = F.positional_encoding(coords, self.config.d_model)
        return emb + feats + Tensor(pe)

    def forward_batch(self, coords: np.ndarray, feats: Tensor, valid: np.ndarray,
                      last_idx: np.ndarray) -> Tensor:
        """Full model pass; returns normalized next-node predictions (B, d_space)."""
        tokens = self.embed_tokens(coords, feats)
        enc = self.encode(tokens, valid)
        rows = enc[np.arange(len(last_idx)), last_idx]
        return self.head(rows)

    # -- feature extraction --------------------------------------------------

    def extract_features(self, cmap: CostMap) -> np.ndarray:
        """(d_model, *map_dims) feature map; cached per cost-map content."""
        if tuple(cmap.dims) != self.config.map_dims:
            raise ValueError(
                f"cost map dims {cmap.dims} do not match model dims {self.config.map_dims}")
        key = cmap.key()
        cached = self._feature_cache.get(key)
        if cached is not None:
            self._feature_cache.move_to_end(key)
            return cached
        with no_grad():
            x = Tensor(cmap.cells.astype(np.float64)[None, None])
            out = self.conv_stack(x, padding=1).data[0]
        self._feature_cache[key] = out
        while len(self._feature_cache) > 8:
            self._feature_cache.popitem(last=False)
        return out

    def patch_features(self, cmaps: Sequence[CostMap], cells: np.ndarray,
                       which_map: np.ndarray) -> Tensor:
        """Conv features for individual cells, via receptive-field patches.

        cells: (T, d_space) integer cell indices; which_map: (T,) index into
        cmaps.  Returns (T, d_model).  Gradients flow into the conv weights,
        matching extract_features exactly at each requested cell.
        """
        rank = self.config.d_space
        dims = np.asarray(self.config.map_dims)
        padded = [np.pad(c.cells.astype(np.float64), PATCH_PAD) for c in cmaps]
        patches = np.empty((len(cells), 1) + (PATCH,) * rank)
        for t, (cell, m) in enumerate(zip(cells, which_map)):
            sl = tuple(slice(int(ci), int(ci) + PATCH) for ci in cell)
            patches[t, 0] = padded[m][sl]
        # each valid conv shrinks the patch by 2; between layers, zero the
        # positions that fall outside the map so the result matches the
        # full-map stack, whose per-layer padding zeroes exactly those cells
        x = Tensor(patches)
        for i in range(CONV_LAYERS):
            x = F.conv(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"],
                       padding=0).relu()
            extent = PATCH - 2 * (i + 1)
            if extent > 1:
                x = x * Tensor(self._boundary_mask(cells, extent, dims))
        return x.reshape(len(cells), self.config.d_model)

    @staticmethod
    def _boundary_mask(cells: np.ndarray, extent: int, dims: np.ndarray) -> np.ndarray:
        """(T, 1, *extent) mask: 1 where cell + offset lies inside the map."""
        half = extent // 2
        offs = np.arange(-half, half + 1)
        rank = cells.shape[1]
        mask = np.ones((len(cells), 1) + (extent,) * rank)
        for axis in range(rank):
            pos = cells[:, axis][:, None] + offs[None, :]  # (T, extent)
            ok = (pos >= 0) & (pos < dims[axis])
            shape = [len(cells), 1] + [1] * rank
            shape[2 + axis] = extent
            mask = mask * ok.reshape(shape)
        return mask


@dataclass
class SampleContext:
    """Everything predict_next needs for one environment/tree pair."""

    env: Environment
    cmap: CostMap
    goal: Point
    start: Point
    nodes: list[Point] = field(default_factory=list)

    @staticmethod
    def for_env(env: Environment, cmap: Optional[CostMap] = None) -> "SampleContext":
        return SampleContext(env=env, cmap=cmap if cmap is not None else rasterize(env),
                             goal=env.goal, start=env.start, nodes=[])


def sequence_coords(ctx: SampleContext, max_seq_len: int) -> np.ndarray:
    """Token coordinate sequence: goal, start, then the most recent tree nodes."""
    nodes = ctx.nodes[-(max_seq_len - 2):] if len(ctx.nodes) > max_seq_len - 2 else ctx.nodes
    return np.asarray([ctx.goal, ctx.start, *nodes], dtype=float)


def cells_of(coords: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Nearest grid cell (floor of coordinates, clipped to the grid)."""
    cells = np.floor(coords).astype(int)
    return np.clip(cells, 0, np.asarray(dims) - 1)


def build_tokens(ctx: SampleContext, model: SamplerModel,
                 pad_to: Optional[int] = None) -> tuple[Tensor, np.ndarray]:
    """Token tensor (1, S, d_model) and validity mask (1, S) for one context."""
    coords = sequence_coords(ctx, model.config.max_seq_len)
    n = len(coords)
    s = n if pad_to is None else max(pad_to, n)
    feats_map = model.extract_features(ctx.cmap)
    cells = cells_of(coords, model.config.map_dims)
    feat = feats_map[(slice(None),) + tuple(cells.T)].T  # (n, d_model)
    coords_p = np.zeros((1, s, model.config.d_space))
    coords_p[0, :n] = coords
    feats_p = np.zeros((1, s, model.config.d_model))
    feats_p[0, :n] = feat
    valid = np.zeros((1, s), dtype=bool)
    valid[0, :n] = True
    return model.embed_tokens(coords_p, Tensor(feats_p)), valid


def predict_next(ctx: SampleContext, model: SamplerModel,
                 pad_to: Optional[int] = None) -> Point:
    """Model-guided next sample, de-normalized and clamped to the workspace."""
    with no_grad():
        tokens, valid = build_tokens(ctx, model, pad_to=pad_to)
        enc = model.encode(tokens, valid)
        last = int(valid[0].nonzero()[0][-1])
        out = model.head(enc[0, last]).data
    size = np.asarray(model.config.map_dims, dtype=float)
    pt = np.clip(out * size, 0.0, size)
    return tuple(float(c) for c in pt)


def hybrid_sample(ctx: SampleContext, model: SamplerModel, alpha: float,
                  rng: np.random.Generator) -> Point:
    """With probability alpha a uniform workspace point, else the model's guess."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if rng.random() <= alpha:
        return tuple(float(rng.uniform(0, s)) for s in ctx.env.workspace.size)
    return predict_next(ctx, model)


class HybridSampler:
    """Sampler-protocol adapter running the transformer mixed sampling rule."""

    name = "rrt_star_former"

    def __init__(self, model: SamplerModel, alpha: float = 0.5):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.model = model
        self.alpha = alpha
        self._ctx: Optional[SampleContext] = None

    def _context(self, env: Environment, tree: Tree) -> SampleContext:
        if self._ctx is None or self._ctx.env is not env:
            self._ctx = SampleContext.for_env(env)
        self._ctx.nodes = tree.nodes
        return self._ctx

    def sample(self, env: Environment, tree: Tree, rng: np.random.Generator) -> Point:
        return hybrid_sample(self._context(env, tree), self.model, self.alpha, rng)


# ---------------------------------------------------------------------------
# persistence

def save_model(model: SamplerModel, path) -> None:
    tensors = {name: p.data for name, p in model.params.items()}
    save_tensors(path, tensors, meta={"model": "sampler", **model.config.to_dict()})


def load_model(path) -> SamplerModel:
    meta, tensors = load_tensors(path)
    try:
        config = ModelConfig.from_dict(meta)
    except (KeyError, TypeError, ValueError) as exc:
        raise WeightFormatError(f"{path}: bad model manifest: {exc}") from exc
    model = SamplerModel(config, seed=0)
    for name, p in model.params.items():
        if name not in tensors:
            raise WeightFormatError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != p.data.shape:
            raise WeightFormatError(
                f"{path}: tensor {name!r} has shape {tensors[name].shape}, "
                f"expected {p.data.shape}")
        p.data = tensors[name]
    return model
