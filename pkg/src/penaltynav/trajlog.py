"""Trajectory logs as comma-separated text with a fixed header."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .mission import MissionLog

__all__ = [
    "COLUMNS",
    "TrajectoryRow",
    "TrajectoryFormatError",
    "rows_from_log",
    "write_trajectory",
    "read_trajectory",
    "format_trajectory",
]


class TrajectoryRow(NamedTuple):
    step: int
    time: float
    x: float
    y: float
    theta: float
    u0: float
    u1: float
    psi_true: float
    psi_enlarged: float
    inner_iterations: int
    outer_iterations: int
    solve_ms: float
    stop: bool
    waypoint: int
    target_x: float
    target_y: float


COLUMNS: tuple[str, ...] = TrajectoryRow._fields
_INT = {"step", "inner_iterations", "outer_iterations", "waypoint"}


class TrajectoryFormatError(ValueError):
    pass


def rows_from_log(log: MissionLog) -> list[TrajectoryRow]:
    return [
        TrajectoryRow(
            step=r.step,
            time=r.step * log.ts,
            x=r.state.x,
            y=r.state.y,
            theta=r.state.theta,
            u0=r.control[0],
            u1=r.control[1],
            psi_true=r.psi_true,
            psi_enlarged=r.psi_enlarged,
            inner_iterations=r.inner_iterations,
            outer_iterations=r.outer_iterations,
            solve_ms=r.solve_ms,
            stop=r.stop,
            waypoint=r.waypoint,
            target_x=r.target[0],
            target_y=r.target[1],
        )
        for r in log.records
    ]


def _cell(name: str, v) -> str:
    if name == "stop":
        return "1" if v else "0"
    if name in _INT:
        return str(int(v))
    # repr round-trips doubles exactly
    return repr(float(v))


def format_trajectory(rows: Iterable[TrajectoryRow] | MissionLog) -> str:
    if isinstance(rows, MissionLog):
        rows = rows_from_log(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    prev = None
    for row in rows:
        if prev is not None and row.step <= prev:
            raise ValueError("rows must be ordered by step")
        prev = row.step
        w.writerow([_cell(n, v) for n, v in zip(COLUMNS, row)])
    return buf.getvalue()


def write_trajectory(rows: Iterable[TrajectoryRow] | MissionLog, path: str | Path) -> None:
    Path(path).write_text(format_trajectory(rows), encoding="utf-8")


def _parse(name: str, text: str, line: int):
    try:
        if name == "stop":
            if text not in ("0", "1"):
                raise ValueError(text)
            return text == "1"
        if name in _INT:
            return int(text)
        v = float(text)
    except ValueError:
        raise TrajectoryFormatError(f"line {line}: bad value {text!r} in column {name}") from None
    if math.isnan(v):
        raise TrajectoryFormatError(f"line {line}: NaN in column {name}")
    return v


def read_trajectory(path: str | Path) -> list[TrajectoryRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TrajectoryFormatError("empty file, expected a header row") from None
        if tuple(header) != COLUMNS:
            raise TrajectoryFormatError(f"header mismatch: expected {','.join(COLUMNS)}, got {','.join(header)}")
        rows: list[TrajectoryRow] = []
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(COLUMNS):
                raise TrajectoryFormatError(f"line {line}: expected {len(COLUMNS)} fields, got {len(rec)}")
            row = TrajectoryRow(*(_parse(n, t, line) for n, t in zip(COLUMNS, rec)))
            if rows and row.step <= rows[-1].step:
                raise TrajectoryFormatError(f"line {line}: steps out of order")
            rows.append(row)
    return rows


def positions(rows: Sequence[TrajectoryRow]) -> list[tuple[float, float]]:
    return [(r.x, r.y) for r in rows]
