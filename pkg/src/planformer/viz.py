"""Deterministic SVG snapshots of an environment, tree and path.

Output is plain string assembly so identical inputs give byte-identical
files.  3D scenes are drawn as their xy projection.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .env import Environment
from .planner import Tree

SCALE = 6  # px per map unit


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(env: Environment, tree: Optional[Tree], path: Optional[Sequence],
               out_path) -> None:
    w = env.workspace.size[0] * SCALE
    h = env.workspace.size[1] * SCALE

    def px(p):  # map coords -> svg coords (y axis flipped)
        return p[0] * SCALE, h - p[1] * SCALE

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(w)}" height="{_fmt(h)}" '
        f'viewBox="0 0 {_fmt(w)} {_fmt(h)}">',
        f'<rect width="{_fmt(w)}" height="{_fmt(h)}" fill="white" stroke="black"/>',
    ]
    for ob in env.obstacles:
        cx, cy = px(ob.center)
        color = "#b08968" if not ob.is_dynamic else "#cccccc"
        parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(ob.radius * SCALE)}" '
                     f'fill="{color}" fill-opacity="0.8"/>')
    if tree is not None:
        for i, parent in enumerate(tree.parent):
            if parent is None:
                continue
            x1, y1 = px(tree.nodes[parent])
            x2, y2 = px(tree.nodes[i])
            parts.append(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
                         f'y2="{_fmt(y2)}" stroke="#88aadd" stroke-width="1"/>')
    if path:
        pts = " ".join(f"{_fmt(px(p)[0])},{_fmt(px(p)[1])}" for p in path)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="red" stroke-width="2.5"/>')
    sx, sy = px(env.start)
    gx, gy = px(env.goal)
    parts.append(f'<circle cx="{_fmt(sx)}" cy="{_fmt(sy)}" r="5" fill="green"/>')
    parts.append(f'<circle cx="{_fmt(gx)}" cy="{_fmt(gy)}" r="5" fill="blue"/>')
    parts.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
