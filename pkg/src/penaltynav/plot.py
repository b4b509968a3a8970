"""Standalone SVG rendering of a scenario and a trajectory log."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .mission import Workspace
from .objective import psi_matrix
from .obstacles import ObstacleSpec
from .scenario import Scenario
from .trajlog import TrajectoryRow

__all__ = ["render_svg", "emit_plot", "waypoints_from_rows"]

_PX_PER_M = 60.0


def _fmt(v: float) -> str:
    s = f"{v:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _runs(mask: np.ndarray):
    """Horizontal runs ``(j, i0, i1)`` of true cells in ``mask[i, j]``."""
    nx, ny = mask.shape
    for j in range(ny):
        i = 0
        col = mask[:, j]
        while i < nx:
            if col[i]:
                i0 = i
                while i < nx and col[i]:
                    i += 1
                yield j, i0, i
            else:
                i += 1


def _region(obstacles: Sequence[ObstacleSpec], ws: Workspace, res: float, fill: str, opacity: float) -> list[str]:
    if not obstacles:
        return []
    nx = max(1, int(math.ceil((ws.xmax - ws.xmin) / res - 1e-9)))
    ny = max(1, int(math.ceil((ws.ymax - ws.ymin) / res - 1e-9)))
    xs = ws.xmin + (np.arange(nx) + 0.5) * res
    ys = ws.ymin + (np.arange(ny) + 0.5) * res
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = (psi_matrix(obstacles, X.ravel(), Y.ravel()) > 0.0).any(axis=0).reshape(nx, ny)
    out = [f'<g fill="{fill}" fill-opacity="{_fmt(opacity)}" stroke="none">']
    for j, i0, i1 in _runs(inside):
        x = ws.xmin + i0 * res
        y = ws.ymin + j * res
        out.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt((i1 - i0) * res)}" height="{_fmt(res)}"/>')
    out.append("</g>")
    return out


def waypoints_from_rows(rows: Sequence[TrajectoryRow]) -> list[tuple[float, float]]:
    seen: list[tuple[float, float]] = []
    for r in rows:
        if r.waypoint >= 0:
            p = (r.target_x, r.target_y)
            if p not in seen:
                seen.append(p)
    return seen


def render_svg(scenario: Scenario, rows: Sequence[TrajectoryRow], workspace: Workspace | None = None,
               fill_resolution: float | None = None) -> str:
    """SVG text: enlarged and true obstacles, trajectory, start, goal and waypoints."""
    if not rows:
        raise ValueError("cannot plot an empty trajectory log")
    ws = workspace or scenario.mission.workspace
    if not (ws.xmax > ws.xmin and ws.ymax > ws.ymin):
        raise ValueError("empty workspace bounds")
    res = fill_resolution or max(ws.xmax - ws.xmin, ws.ymax - ws.ymin) / 200.0
    w = ws.xmax - ws.xmin
    h = ws.ymax - ws.ymin
    mark = 0.02 * max(w, h)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(w * _PX_PER_M)}" height="{_fmt(h * _PX_PER_M)}" '
        f'viewBox="{_fmt(ws.xmin)} {_fmt(-ws.ymax)} {_fmt(w)} {_fmt(h)}">',
        f"<title>{escape(scenario.name)}</title>",
        f'<rect x="{_fmt(ws.xmin)}" y="{_fmt(-ws.ymax)}" width="{_fmt(w)}" height="{_fmt(h)}" fill="white"/>',
        # world coordinates have y up
        '<g transform="scale(1,-1)">',
    ]
    lines += _region(scenario.enlarged_obstacles, ws, res, "#e8a0a0", 0.6)
    lines += _region(scenario.obstacles, ws, res, "#b03030", 0.9)
    pts = " ".join(f"{_fmt(r.x)},{_fmt(r.y)}" for r in rows)
    lines.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="{_fmt(mark / 4)}"/>')
    sx, sy = scenario.start.x, scenario.start.y
    lines.append(f'<rect class="start" x="{_fmt(sx - mark)}" y="{_fmt(sy - mark)}" '
                 f'width="{_fmt(2 * mark)}" height="{_fmt(2 * mark)}" fill="#2a9d3a"/>')
    gx, gy = scenario.goal.x, scenario.goal.y
    lines.append(f'<circle class="goal" cx="{_fmt(gx)}" cy="{_fmt(gy)}" r="{_fmt(mark)}" fill="#2050c0"/>')
    for px, py in waypoints_from_rows(rows):
        d = f"{_fmt(px)},{_fmt(py + mark)} {_fmt(px + mark)},{_fmt(py)} {_fmt(px)},{_fmt(py - mark)} {_fmt(px - mark)},{_fmt(py)}"
        lines.append(f'<polygon class="waypoint" points="{d}" fill="black"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_plot(scenario: Scenario, rows: Sequence[TrajectoryRow], path: str | Path, **kwargs) -> str:
    svg = render_svg(scenario, rows, **kwargs)
    Path(path).write_text(svg, encoding="utf-8")
    return svg
