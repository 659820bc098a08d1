"""RRT* skeleton: tree bookkeeping, steering, rewiring and the planning loop.

The planning loop is sampler-agnostic: any object with a
``sample(env, tree, rng) -> point`` method can drive it, so the uniform
goal-biased sampler and the transformer-guided hybrid sampler share the
exact same nearest/steer/collision/rewire pipeline.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .env import Environment, is_free_point, is_free_segment

Point = tuple[float, ...]

COST_TOL = 1e-9


class Sampler(Protocol):
    def sample(self, env: Environment, tree: "Tree", rng: np.random.Generator) -> Point: ...


class Tree:
    """Search tree rooted at the start state; insertion order is preserved."""

    def __init__(self, root: Point):
        self.nodes: list[Point] = [tuple(float(c) for c in root)]
        self.parent: list[Optional[int]] = [None]
        self.cost_to_root: list[float] = [0.0]

    def __len__(self) -> int:
        return len(self.nodes)

    def add(self, x: Point, parent: int) -> int:
        x = tuple(float(c) for c in x)
        self.nodes.append(x)
        self.parent.append(parent)
        self.cost_to_root.append(self.cost_to_root[parent] + math.dist(x, self.nodes[parent]))
        return len(self.nodes) - 1

    def children_of(self, idx: int) -> list[int]:
        return [i for i, p in enumerate(self.parent) if p == idx]

    def reparent(self, idx: int, new_parent: int) -> None:
        self.parent[idx] = new_parent
        self._recompute_costs(idx)

    def _recompute_costs(self, idx: int) -> None:
        stack = [idx]
        while stack:
            i = stack.pop()
            p = self.parent[i]
            self.cost_to_root[i] = self.cost_to_root[p] + math.dist(self.nodes[i], self.nodes[p])
            stack.extend(self.children_of(i))

    def path_to(self, idx: int) -> list[Point]:
        path = []
        cur: Optional[int] = idx
        while cur is not None:
            path.append(self.nodes[cur])
            cur = self.parent[cur]
        path.reverse()
        return path


@dataclass(frozen=True)
class PlannerConfig:
    step_size: float = 4.0
    rewire_radius: float = 0.0
    goal_bias: float = 0.05
    goal_threshold: Optional[float] = None  # defaults to step_size
    max_iterations: int = 2000
    optimization_budget: int = 5000

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")
        if self.goal_threshold is not None and self.goal_threshold <= 0:
            raise ValueError("goal_threshold must be > 0")

    @property
    def tau(self) -> float:
        return self.goal_threshold if self.goal_threshold is not None else self.step_size


@dataclass
class PlanResult:
    path: list[Point]
    initial_cost: float
    final_cost: float
    nodes_explored: int
    iterations: int
    time_to_first: float
    success: bool
    total_iterations: int = 0

    def csv_row(self, method: str, env_seed: int, rng_seed: int) -> str:
        return ",".join([
            method, str(env_seed), str(rng_seed), str(int(self.success)),
            f"{self.time_to_first:.6f}", str(self.nodes_explored), str(self.iterations),
            f"{self.initial_cost:.6f}" if self.success else "",
            f"{self.final_cost:.6f}" if self.success else "",
        ])


def path_cost(path: Sequence[Point]) -> float:
    """Cumulative Euclidean length of a polyline; a single point costs 0."""
    if len(path) == 0:
        raise ValueError("empty path")
    return sum(math.dist(a, b) for a, b in zip(path, path[1:]))


def nearest(tree: Tree, x: Point) -> int:
    """Index of the closest tree node; ties go to the lowest insertion index."""
    pts = np.asarray(tree.nodes, dtype=float)
    d = np.linalg.norm(pts - np.asarray(x, dtype=float), axis=1)
    return int(np.argmin(d))


def steer(x_rand: Point, x_nearest: Point, step: float) -> Point:
    d = math.dist(x_rand, x_nearest)
    if d <= step:
        return tuple(x_rand)
    f = step / d
    return tuple(n + f * (r - n) for r, n in zip(x_rand, x_nearest))


def nearby(tree: Tree, x: Point, radius: float) -> list[int]:
    """All node indices within `radius` of x (radius 0 gives the empty set)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return []
    pts = np.asarray(tree.nodes, dtype=float)
    d = np.linalg.norm(pts - np.asarray(x, dtype=float), axis=1)
    return [int(i) for i in np.nonzero(d <= radius)[0]]


def extend_and_rewire(tree: Tree, x_next: Point, env: Environment, radius: float) -> Optional[int]:
    """RRT* extension: attach x_next to its cheapest collision-free parent,
    then re-route nearby nodes through it where that strictly lowers cost.

    Returns the new node's index, or None when no collision-free connection
    exists (the tree is left unchanged).
    """
    if not is_free_point(env, x_next):
        raise ValueError("x_next must lie in free space")
    cand = nearby(tree, x_next, radius)
    if not cand:
        cand = [nearest(tree, x_next)]
    best_parent, best_cost = None, math.inf
    for i in cand:
        c = tree.cost_to_root[i] + math.dist(tree.nodes[i], x_next)
        if c < best_cost and is_free_segment(env, tree.nodes[i], x_next):
            best_parent, best_cost = i, c
    if best_parent is None:
        return None
    idx = tree.add(x_next, best_parent)
    for i in cand:
        if i == best_parent:
            continue
        through = best_cost + math.dist(x_next, tree.nodes[i])
        if through < tree.cost_to_root[i] - COST_TOL and is_free_segment(env, x_next, tree.nodes[i]):
            tree.reparent(i, idx)
    return idx


def within_goal(x: Point, goal: Point, tau: float) -> bool:
    """Closed threshold: distance exactly tau counts as reached."""
    return math.dist(x, goal) <= tau


def goal_bias_sampler(env: Environment, p: float, rng: np.random.Generator) -> Point:
    """With probability p the goal itself, otherwise uniform over the workspace."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if rng.random() <= p:
        return env.goal
    return tuple(float(rng.uniform(0, s)) for s in env.workspace.size)


class GoalBiasSampler:
    """Algorithm-2 style sampler: uniform with goal bias p."""

    name = "rrt_star"

    def __init__(self, p: float = 0.05):
        self.p = p

    def sample(self, env: Environment, tree: Tree, rng: np.random.Generator) -> Point:
        return goal_bias_sampler(env, self.p, rng)


def extract_path(tree: Tree, x_g: Point) -> list[Point]:
    """Root-to-goal node sequence via parent links."""
    x_g = tuple(float(c) for c in x_g)
    for idx in range(len(tree) - 1, -1, -1):
        if tree.nodes[idx] == x_g:
            return tree.path_to(idx)
    raise ValueError("goal is not in the tree")


SenseHook = Callable[[Environment, int, Point], Environment]


def plan(
    env: Environment,
    sampler: Sampler,
    config: PlannerConfig,
    rng_seed: int,
    sense_hook: Optional[SenseHook] = None,
    checkpoint_hook: Optional[Callable[[Tree, Optional[int]], None]] = None,
) -> tuple[PlanResult, Tree]:
    """Run the RRT* loop until the goal joins the tree, then keep optimizing
    for `optimization_budget` further iterations.

    nodes_explored / iterations are snapshots at the first goal connection
    (the paper's comparison metrics); total_iterations covers the whole run.
    Deterministic for fixed inputs and rng_seed.
    """
    if not (is_free_point(env, env.start) and is_free_point(env, env.goal)):
        raise ValueError("start and goal must lie in free space")
    rng = np.random.default_rng(rng_seed)
    tree = Tree(env.start)
    tau = config.tau
    goal_idx: Optional[int] = None
    first_nodes = first_iters = 0
    time_to_first = 0.0
    t0 = time.perf_counter()
    it = 0
    iters_after_goal = 0
    while True:
        if goal_idx is None:
            if it >= config.max_iterations:
                break
        elif iters_after_goal >= config.optimization_budget:
            break
        it += 1
        if goal_idx is not None:
            iters_after_goal += 1
        if sense_hook is not None:
            env = sense_hook(env, it, env.start)
        x_rand = sampler.sample(env, tree, rng)
        i_near = nearest(tree, x_rand)
        x_next = steer(x_rand, tree.nodes[i_near], config.step_size)
        if x_next == tree.nodes[i_near]:
            continue
        if not is_free_point(env, x_next):
            continue
        if not is_free_segment(env, tree.nodes[i_near], x_next):
            continue
        idx = extend_and_rewire(tree, x_next, env, config.rewire_radius)
        if idx is None:
            continue
        # goal connection: a new node inside the goal ball with a free segment
        # to the goal either inserts the goal node or re-parents it when the
        # route through the new node is strictly cheaper
        if within_goal(x_next, env.goal, tau) and x_next != env.goal \
                and is_free_segment(env, x_next, env.goal):
            if goal_idx is None:
                goal_idx = tree.add(env.goal, idx)
                time_to_first = time.perf_counter() - t0
                first_nodes = len(tree)
                first_iters = it
                initial_cost = tree.cost_to_root[goal_idx]
            else:
                through = tree.cost_to_root[idx] + math.dist(x_next, env.goal)
                if through < tree.cost_to_root[goal_idx] - COST_TOL:
                    tree.reparent(goal_idx, idx)
        if checkpoint_hook is not None:
            checkpoint_hook(tree, goal_idx)

    if goal_idx is None:
        result = PlanResult(path=[], initial_cost=math.inf, final_cost=math.inf,
                            nodes_explored=len(tree), iterations=it,
                            time_to_first=time.perf_counter() - t0, success=False,
                            total_iterations=it)
        return result, tree
    path = tree.path_to(goal_idx)
    result = PlanResult(path=path, initial_cost=initial_cost,
                        final_cost=tree.cost_to_root[goal_idx],
                        nodes_explored=first_nodes, iterations=first_iters,
                        time_to_first=time_to_first, success=True,
                        total_iterations=it)
    return result, tree
