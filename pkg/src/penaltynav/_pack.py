"""Flat array packing of obstacle tapes for the numeric kernels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import ConstraintExpr

MAX_STACK = 64


@dataclass(frozen=True, eq=False)
class ObstaclePack:
    """All obstacles of a problem as postfix programs in contiguous arrays.

    Constraint ``c`` owns tapes ``3c`` (value), ``3c+1`` (d/dx) and ``3c+2``
    (d/dy).  Obstacle ``i`` owns constraints ``obs_offsets[i]:obs_offsets[i+1]``.
    Constant indices in ``args`` are global into ``consts``.
    """

    ops: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    tape_offsets: np.ndarray
    obs_offsets: np.ndarray
    depth: int

    @property
    def n_obstacles(self) -> int:
        return len(self.obs_offsets) - 1

    @classmethod
    def build(cls, obstacles: Sequence[Sequence[ConstraintExpr]]) -> "ObstaclePack":
        ops: list[int] = []
        args: list[int] = []
        consts: list[float] = []
        tape_offsets = [0]
        obs_offsets = [0]
        depth = 1
        n_con = 0
        for cons in obstacles:
            for c in cons:
                for tape in c.tapes():
                    base = len(consts)
                    for op, arg in zip(tape.ops, tape.args):
                        ops.append(op)
                        args.append(arg + base if op == 0 else arg)
                    consts.extend(tape.consts)
                    tape_offsets.append(len(ops))
                    depth = max(depth, tape.depth)
                n_con += 1
            obs_offsets.append(n_con)
        if depth > MAX_STACK:
            raise ValueError(f"expression too deeply nested (stack depth {depth} > {MAX_STACK})")
        return cls(
            np.asarray(ops, dtype=np.int32),
            np.asarray(args, dtype=np.int32),
            np.asarray(consts if consts else [0.0], dtype=np.float64),
            np.asarray(tape_offsets, dtype=np.int32),
            np.asarray(obs_offsets, dtype=np.int32),
            depth,
        )
