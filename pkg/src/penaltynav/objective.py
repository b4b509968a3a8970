"""Single-shooting NMPC objective with quadratic obstacle penalties.

The objective of a control sequence ``u = (u_0, ..., u_{N-1})`` is::

    l(u) = lN(F_N) + sum_{k<N} lk(F_k, u_k) + 1/2 sum_{k=1..N} sum_i mu[i, k-1] psi_i(z_k)^2

with quadratic tracking costs ``lk = (q-qref)'Q(q-qref) + (u-uref)'R(u-uref)``
and ``F_k`` the RK4 rollout from the fixed initial state.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._pack import ObstaclePack
from .dynamics import VehicleModel, VehicleState
from .expr import EvaluationError
from .kernels import ProblemKernel
from .obstacles import ObstacleSpec

__all__ = [
    "CostWeights",
    "InputBox",
    "ProblemSpec",
    "uniform_penalty",
    "eval_objective",
    "eval_objective_gradient",
    "max_obstacle_violation",
    "trajectory",
    "psi_matrix",
]


def _default_q():
    return np.diag([1.0, 1.0, 0.1])


@dataclass(frozen=True, eq=False)
class CostWeights:
    Q: np.ndarray = field(default_factory=_default_q)
    R: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1]))
    QN: np.ndarray | None = None
    q_ref: VehicleState = VehicleState(0.0, 0.0, 0.0)
    u_ref: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        QN = 10.0 * Q if self.QN is None else np.array(self.QN, dtype=float)
        R = np.array(self.R, dtype=float)
        if R.shape == (2, 2):
            if np.any(R != np.diag(np.diag(R))):
                raise ValueError("R must be diagonal")
            R = np.diag(R).copy()
        for name, M in (("Q", Q), ("QN", QN)):
            if M.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3")
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M)[0] < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        if R.shape != (2,) or np.any(R <= 0.0):
            raise ValueError("R must be diagonal with strictly positive entries")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "QN", QN)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "q_ref", VehicleState(*map(float, self.q_ref)))
        object.__setattr__(self, "u_ref", tuple(map(float, self.u_ref)))


@dataclass(frozen=True)
class InputBox:
    lower: tuple[float, float]
    upper: tuple[float, float]

    def __post_init__(self):
        lo = tuple(map(float, self.lower))
        hi = tuple(map(float, self.upper))
        if len(lo) != 2 or len(hi) != 2:
            raise ValueError("input bounds must have two components")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"input bounds out of order: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def stacked(self, N: int) -> tuple[np.ndarray, np.ndarray]:
        """Bounds of ``U^N`` as flat arrays of length ``2N``."""
        return np.tile(self.lower, N), np.tile(self.upper, N)


@functools.lru_cache(maxsize=64)
def _pack_for(obstacles: tuple[ObstacleSpec, ...]) -> ObstaclePack:
    return ObstaclePack.build([o.constraints for o in obstacles])


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One open-loop NMPC problem; ``obstacles`` are the enlarged sets."""

    model: VehicleModel
    ts: float
    N: int
    weights: CostWeights
    obstacles: tuple[ObstacleSpec, ...]
    input_box: InputBox
    q0: VehicleState

    def __post_init__(self):
        if not (self.ts > 0.0 and math.isfinite(self.ts)):
            raise ValueError("sampling time must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("horizon must be a positive integer")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "q0", VehicleState(*map(float, self.q0)))

    @property
    def n_obstacles(self) -> int:
        return len(self.obstacles)

    @property
    def n_vars(self) -> int:
        return 2 * self.N

    @functools.cached_property
    def pack(self) -> ObstaclePack:
        return _pack_for(self.obstacles)

    @functools.cached_property
    def kernel(self) -> ProblemKernel:
        return self.make_kernel(ProblemKernel)

    def make_kernel(self, cls):
        w = self.weights
        return cls(
            self.model.code, self.model.L, self.ts, self.N,
            self.q0, w.q_ref, w.u_ref, w.Q, w.R, w.QN, self.pack,
        )

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.input_box.stacked(self.N)

    def at_state(self, q0) -> "ProblemSpec":
        return replace(self, q0=VehicleState(*map(float, q0)))

    def with_reference(self, q_ref) -> "ProblemSpec":
        return replace(self, weights=replace(self.weights, q_ref=VehicleState(*map(float, q_ref))))


def uniform_penalty(n_obstacles: int, N: int, value: float = 1.0) -> np.ndarray:
    """Penalty matrix of shape ``(n_obstacles, N)``; column ``k`` is stage ``k+1``."""
    return np.full((n_obstacles, N), float(value))


def _flat(U, N: int) -> np.ndarray:
    u = np.ascontiguousarray(U, dtype=np.float64).reshape(-1)
    if u.shape[0] != 2 * N:
        raise ValueError(f"expected {N} inputs (length {2 * N}), got length {u.shape[0]}")
    return u


def _mu(spec: ProblemSpec, mu) -> np.ndarray:
    mu = np.ascontiguousarray(mu, dtype=np.float64).reshape(spec.n_obstacles, spec.N)
    if np.any(mu < 0.0):
        raise ValueError("penalty factors must be nonnegative")
    return mu


def eval_objective(spec: ProblemSpec, mu, U) -> float:
    value = spec.kernel.value(_mu(spec, mu), _flat(U, spec.N))
    if not math.isfinite(value):
        raise EvaluationError(f"objective is not finite ({value})")
    return value


def eval_objective_gradient(spec: ProblemSpec, mu, U) -> tuple[float, np.ndarray]:
    grad = np.empty(spec.n_vars)
    value = spec.kernel.value_grad(_mu(spec, mu), _flat(U, spec.N), grad)
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise EvaluationError("objective or gradient is not finite")
    return value, grad


def max_obstacle_violation(spec: ProblemSpec, U) -> tuple[np.ndarray, float]:
    """Per-stage max of ``psi_i(z_k)`` over obstacles (stages 1..N) and the overall max."""
    if spec.n_obstacles == 0:
        return np.zeros(spec.N), 0.0
    psi = spec.kernel.stage_psi(_flat(U, spec.N))
    per_stage = psi.max(axis=0)
    return per_stage, float(per_stage.max())


def trajectory(spec: ProblemSpec, U) -> np.ndarray:
    """Predicted states ``F_0 .. F_N``."""
    return spec.kernel.rollout(_flat(U, spec.N))


def psi_matrix(obstacles: Sequence[ObstacleSpec], xs, ys) -> np.ndarray:
    """``psi_i`` at the given points through the active kernel, shape ``(n_obs, n)``."""
    kern = ProblemKernel(0, 1.0, 1.0, 1, (0, 0, 0), (0, 0, 0), (0, 0), np.eye(3), (1, 1), np.eye(3),
                         _pack_for(tuple(obstacles)))
    return kern.psi_at(np.ascontiguousarray(xs, dtype=float), np.ascontiguousarray(ys, dtype=float))
