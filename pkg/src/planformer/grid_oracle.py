"""Grid shortest-path search over occupancy maps.

A* with a Euclidean heuristic produces demonstration paths; Dijkstra is the
same machinery with a zero heuristic and serves as the optimality oracle in
tests.  2D grids are 8-connected, 3D grids 26-connected; moves cost the
Euclidean norm of the cell delta (1, sqrt2, sqrt3).  Diagonal moves may not
cut corners: every axis-aligned projection of the move must land on a free
cell.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .env import CostMap

Cell = tuple[int, ...]


@dataclass(frozen=True)
class GridPath:
    cells: tuple[Cell, ...]
    cost: float


def _moves(dim: int) -> list[tuple[Cell, float]]:
    out = []
    for delta in itertools.product((-1, 0, 1), repeat=dim):
        if all(d == 0 for d in delta):
            continue
        out.append((delta, math.sqrt(sum(d * d for d in delta))))
    return out


def _neighbors(cells: np.ndarray, cell: Cell, moves) -> list[tuple[Cell, float]]:
    dim = len(cell)
    dims = cells.shape
    out = []
    for delta, cost in moves:
        nxt = tuple(c + d for c, d in zip(cell, delta))
        if any(n < 0 or n >= dims[i] for i, n in enumerate(nxt)):
            continue
        if cells[nxt]:
            continue
        # corner-cut rule: zeroing any proper nonempty subset of the move's
        # components must also give a free cell
        axes = [i for i, d in enumerate(delta) if d != 0]
        if len(axes) > 1:
            blocked = False
            for r in range(1, len(axes)):
                for keep in itertools.combinations(axes, r):
                    probe = tuple(
                        cell[i] + (delta[i] if i in keep else 0) for i in range(dim))
                    if cells[probe]:
                        blocked = True
                        break
                if blocked:
                    break
            if blocked:
                continue
        out.append((nxt, cost))
    return out


def _canonical_cost(path: Sequence[Cell]) -> float:
    """Path cost summed per move type (straight / planar / space diagonal).

    The running g-scores accumulate step lengths in search order, so two
    optimal searches can disagree in the last ulp.  1, sqrt(2) and sqrt(3)
    are linearly independent over the rationals, hence every optimal path
    uses the same move multiset and this grouped sum is a canonical value.
    """
    counts = Counter(sum(a != b for a, b in zip(u, v))
                     for u, v in zip(path, path[1:]))
    return float(sum(n * math.sqrt(k) for k, n in sorted(counts.items())))


def _search(cmap: CostMap, s: Cell, g: Cell, heuristic) -> Optional[GridPath]:
    cells = cmap.cells
    if cells[s] or cells[g]:
        raise ValueError("start and goal cells must be free")
    if s == g:
        return GridPath(cells=(s,), cost=0.0)
    moves = _moves(len(s))
    dist: dict[Cell, float] = {s: 0.0}
    parent: dict[Cell, Cell] = {}
    counter = itertools.count()  # insertion-order tie break
    h0 = heuristic(s)
    heap: list[tuple[float, float, int, Cell]] = [(h0, h0, next(counter), s)]
    closed: set[Cell] = set()
    while heap:
        f, _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == g:
            path = [cur]
            while path[-1] != s:
                path.append(parent[path[-1]])
            path.reverse()
            return GridPath(cells=tuple(path), cost=_canonical_cost(path))
        closed.add(cur)
        d_cur = dist[cur]
        for nxt, step in _neighbors(cells, cur, moves):
            nd = d_cur + step
            if nd < dist.get(nxt, math.inf) - 1e-12:
                dist[nxt] = nd
                parent[nxt] = cur
                h = heuristic(nxt)
                heapq.heappush(heap, (nd + h, h, next(counter), nxt))
    return None


def astar(cmap: CostMap, s: Cell, g: Cell) -> Optional[GridPath]:
    """Optimal grid path from s to g, or None when disconnected."""
    return _search(cmap, s, g, lambda c: math.dist(c, g))


def dijkstra(cmap: CostMap, s: Cell, g: Cell) -> Optional[GridPath]:
    """A* without a heuristic; the test oracle for astar's optimality."""
    return _search(cmap, s, g, lambda c: 0.0)


def to_waypoints(path: GridPath) -> list[tuple[float, ...]]:
    """Cell coordinates to continuous map units: cell (i, j) -> (i+0.5, j+0.5)."""
    if not path.cells:
        raise ValueError("empty path")
    return [tuple(c + 0.5 for c in cell) for cell in path.cells]
