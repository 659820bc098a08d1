"""Workspaces, circular/spherical obstacles, collision predicates and scene generation.

Obstacles are closed sets: a point exactly on the boundary counts as a
collision.  All collision tests are analytic (point-to-point and
point-to-segment distances), never sampled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

ENV_FORMAT_VERSION = "env-v1"
COSTMAP_MAGIC = "COSTMAP v1"

# bounded rejection sampling for start/goal placement
MAX_PLACEMENT_ATTEMPTS = 1000


class EnvFormatError(ValueError):
    """Raised for malformed environment or cost-map files."""


@dataclass(frozen=True)
class Workspace:
    dim: int
    size: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"workspace dim must be 2 or 3, got {self.dim}")
        if len(self.size) != self.dim:
            raise ValueError("size must have one extent per dimension")
        if any(s <= 0 for s in self.size):
            raise ValueError("workspace extents must be positive")

    def contains(self, x: Sequence[float]) -> bool:
        return all(0.0 <= xi <= si for xi, si in zip(x, self.size))


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, ...]
    radius: float
    velocity: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("obstacle radius must be >= 0")

    @property
    def is_dynamic(self) -> bool:
        return self.velocity is not None and any(v != 0 for v in self.velocity)


@dataclass(frozen=True)
class Environment:
    workspace: Workspace
    obstacles: tuple[Obstacle, ...]
    start: tuple[float, ...]
    goal: tuple[float, ...]
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.workspace.dim


@dataclass(frozen=True)
class CostMap:
    """Binary occupancy grid at 1 cell per map unit (0 = free, 1 = obstacle)."""

    dims: tuple[int, ...]
    cells: np.ndarray  # uint8, shape == dims

    def __post_init__(self):
        if tuple(self.cells.shape) != tuple(self.dims):
            raise ValueError("cell array shape must match dims")
        self.cells.setflags(write=False)

    def key(self) -> bytes:
        return self.cells.tobytes()


@dataclass(frozen=True)
class ObstacleDelta:
    revealed: tuple[Obstacle, ...] = ()
    moved: tuple[tuple[int, tuple[float, ...]], ...] = ()

    @property
    def empty(self) -> bool:
        return not self.revealed and not self.moved


def is_free_point(env: Environment, x: Sequence[float]) -> bool:
    """True iff x is inside the workspace and strictly outside every obstacle."""
    if len(x) != env.dim:
        raise ValueError(f"point has dimension {len(x)}, expected {env.dim}")
    if not env.workspace.contains(x):
        return False
    for ob in env.obstacles:
        if math.dist(x, ob.center) <= ob.radius:
            return False
    return True


def _segment_distance(center, a, b) -> float:
    """Distance from center to the closed segment [a, b]."""
    ax = np.asarray(a, dtype=float)
    bx = np.asarray(b, dtype=float)
    c = np.asarray(center, dtype=float)
    d = bx - ax
    dd = float(d @ d)
    if dd == 0.0:
        return float(np.linalg.norm(c - ax))
    t = float((c - ax) @ d) / dd
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(c - (ax + t * d)))


def is_free_segment(env: Environment, a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff the closed segment [a, b] avoids every obstacle (analytic test)."""
    if not (env.workspace.contains(a) and env.workspace.contains(b)):
        return False
    for ob in env.obstacles:
        if _segment_distance(ob.center, a, b) <= ob.radius:
            return False
    return True


def rasterize(env: Environment) -> CostMap:
    """Occupancy grid: cell (i, j[, k]) is 1 iff its center point is non-free."""
    dims = tuple(int(round(s)) for s in env.workspace.size)
    grids = np.meshgrid(*(np.arange(d) + 0.5 for d in dims), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)  # (ncells, dim)
    occupied = np.zeros(len(pts), dtype=bool)
    for ob in env.obstacles:
        c = np.asarray(ob.center, dtype=float)
        occupied |= np.linalg.norm(pts - c, axis=1) <= ob.radius
    # cell centers are always inside the workspace, so only obstacles matter
    return CostMap(dims=dims, cells=occupied.reshape(dims).astype(np.uint8))


def generate_random_env(
    dim: int,
    size: Sequence[float],
    obstacle_count_range: tuple[int, int],
    radius_range: tuple[float, float],
    seed: int,
    require_connected: bool = True,
) -> Environment:
    """Generate a random scene: uniform obstacle count/radii, free start and goal.

    Deterministic in (arguments, seed).  When require_connected is set, the
    start/goal pair is additionally checked for grid connectivity on the
    rasterized map and resampled if no path exists.
    """
    lo_n, hi_n = obstacle_count_range
    lo_r, hi_r = radius_range
    if lo_n > hi_n or lo_r > hi_r:
        raise ValueError("empty obstacle count or radius range")
    ws = Workspace(dim=dim, size=tuple(float(s) for s in size))
    rng = np.random.default_rng(seed)
    n_obs = int(rng.integers(lo_n, hi_n + 1))
    obstacles = []
    for _ in range(n_obs):
        center = tuple(float(rng.uniform(0, s)) for s in ws.size)
        radius = float(rng.uniform(lo_r, hi_r))
        obstacles.append(Obstacle(center=center, radius=radius))
    obstacles = tuple(obstacles)

    probe = Environment(workspace=ws, obstacles=obstacles, start=(0.0,) * dim,
                        goal=(0.0,) * dim, seed=seed)
    cmap = rasterize(probe) if require_connected else None

    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        start = tuple(float(rng.uniform(0, s)) for s in ws.size)
        goal = tuple(float(rng.uniform(0, s)) for s in ws.size)
        if start == goal:
            continue
        if not (is_free_point(probe, start) and is_free_point(probe, goal)):
            continue
        if require_connected and not _grid_connected(cmap, start, goal):
            continue
        return Environment(workspace=ws, obstacles=obstacles, start=start,
                           goal=goal, seed=seed)
    raise RuntimeError(
        f"could not place start/goal in free space after {MAX_PLACEMENT_ATTEMPTS} attempts")


def _grid_connected(cmap: CostMap, start, goal) -> bool:
    from . import grid_oracle

    s = point_to_cell(cmap, start)
    g = point_to_cell(cmap, goal)
    if cmap.cells[s] or cmap.cells[g]:
        return False
    return grid_oracle.astar(cmap, s, g) is not None


def point_to_cell(cmap: CostMap, x: Sequence[float]) -> tuple[int, ...]:
    return tuple(min(int(xi), d - 1) for xi, d in zip(x, cmap.dims))


def sense_update(
    truth: Environment,
    known: Environment,
    x_t: Sequence[float],
    t: int,
    sensing_radius: float,
) -> ObstacleDelta:
    """Sensor model: reveal truth obstacles whose surface intersects the
    sensing ball around x_t and which are missing or stale in `known`.

    In a static fully-known environment the delta is always empty.
    """
    known_pos = {(ob.center, ob.radius) for ob in known.obstacles}
    revealed = []
    moved = []
    for i, ob in enumerate(truth.obstacles):
        if math.dist(x_t, ob.center) > sensing_radius + ob.radius:
            continue
        if (ob.center, ob.radius) in known_pos:
            continue
        # same radius at a different position: report a move when some known
        # obstacle shares the radius but not the center, else a reveal
        stale = next((k for k in known.obstacles
                      if k.radius == ob.radius and k.velocity == ob.velocity
                      and k.center != ob.center), None)
        if stale is not None:
            moved.append((i, ob.center))
        else:
            revealed.append(ob)
    return ObstacleDelta(revealed=tuple(revealed), moved=tuple(moved))


def apply_delta(known: Environment, truth: Environment, delta: ObstacleDelta) -> Environment:
    """Fold a sensed delta into the known environment."""
    if delta.empty:
        return known
    obstacles = list(known.obstacles)
    obstacles.extend(delta.revealed)
    for idx, center in delta.moved:
        moved_ob = replace(truth.obstacles[idx], center=center)
        stale = next((j for j, k in enumerate(obstacles)
                      if k.radius == moved_ob.radius and k.velocity == moved_ob.velocity), None)
        if stale is not None:
            obstacles[stale] = moved_ob
        else:
            obstacles.append(moved_ob)
    return replace(known, obstacles=tuple(obstacles))


def step_dynamic(env: Environment, t: int = 1) -> Environment:
    """Advance every moving obstacle by `t` steps, reflecting off the bounds."""
    if t < 0:
        raise ValueError("t must be >= 0")
    obstacles = env.obstacles
    for _ in range(t):
        obstacles = tuple(_step_obstacle(ob, env.workspace) for ob in obstacles)
    return replace(env, obstacles=obstacles)


def _step_obstacle(ob: Obstacle, ws: Workspace) -> Obstacle:
    if not ob.is_dynamic:
        return ob
    center = list(ob.center)
    vel = list(ob.velocity)
    for i, s in enumerate(ws.size):
        c = center[i] + vel[i]
        # reflect off [0, s]
        while c < 0 or c > s:
            if c < 0:
                c = -c
            else:
                c = 2 * s - c
            vel[i] = -vel[i]
        center[i] = c
    return replace(ob, center=tuple(center), velocity=tuple(vel))


# ---------------------------------------------------------------------------
# file formats

def env_to_dict(env: Environment) -> dict:
    d = {
        "version": ENV_FORMAT_VERSION,
        "dim": env.dim,
        "size": list(env.workspace.size),
        "obstacles": [],
        "start": list(env.start),
        "goal": list(env.goal),
        "seed": env.seed,
    }
    for ob in env.obstacles:
        entry = {"center": list(ob.center), "radius": ob.radius}
        if ob.velocity is not None:
            entry["velocity"] = list(ob.velocity)
        d["obstacles"].append(entry)
    return d


def env_from_dict(d: dict) -> Environment:
    if d.get("version") != ENV_FORMAT_VERSION:
        raise EnvFormatError(f"unsupported environment version {d.get('version')!r}")
    try:
        ws = Workspace(dim=int(d["dim"]), size=tuple(float(s) for s in d["size"]))
        obstacles = tuple(
            Obstacle(
                center=tuple(float(c) for c in ob["center"]),
                radius=float(ob["radius"]),
                velocity=tuple(float(v) for v in ob["velocity"]) if "velocity" in ob else None,
            )
            for ob in d["obstacles"]
        )
        return Environment(
            workspace=ws,
            obstacles=obstacles,
            start=tuple(float(c) for c in d["start"]),
            goal=tuple(float(c) for c in d["goal"]),
            seed=int(d.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise EnvFormatError(f"malformed environment file: {exc}") from exc


def save_env(env: Environment, path) -> None:
    with open(path, "w") as fh:
        json.dump(env_to_dict(env), fh, indent=2)
        fh.write("\n")


def load_env(path) -> Environment:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise EnvFormatError(f"{path}: not valid JSON: {exc}") from exc
    return env_from_dict(d)


def save_costmap(cmap: CostMap, path) -> None:
    header = f"{COSTMAP_MAGIC} {len(cmap.dims)} " + " ".join(str(d) for d in cmap.dims)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(cmap.cells.tobytes())


def load_costmap(path) -> CostMap:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) < 4 or " ".join(parts[:2]) != COSTMAP_MAGIC:
            raise EnvFormatError(f"{path}: bad cost map header {header!r}")
        ndim = int(parts[2])
        dims = tuple(int(p) for p in parts[3:3 + ndim])
        if len(dims) != ndim:
            raise EnvFormatError(f"{path}: header dims do not match declared rank")
        blob = fh.read()
    expected = int(np.prod(dims))
    if len(blob) != expected:
        raise EnvFormatError(f"{path}: expected {expected} cells, found {len(blob)}")
    cells = np.frombuffer(blob, dtype=np.uint8).reshape(dims).copy()
    if not np.isin(cells, (0, 1)).all():
        raise EnvFormatError(f"{path}: cost map cells must be 0 or 1")
    return CostMap(dims=dims, cells=cells)
