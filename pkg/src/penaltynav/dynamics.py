"""Vehicle kinematics, RK4 discretization and the reverse sweep through it.

States are ``(x, y, theta)``.  The bicycle is driven by ``(v, delta_f)``, the
trailer by the towing vehicle's velocity reference ``(u_x, u_y)``.  Heading is
never wrapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

__all__ = [
    "VehicleState",
    "VehicleModel",
    "BICYCLE",
    "TRAILER",
    "continuous_dynamics",
    "dynamics_jacobians",
    "rk4_step",
    "rk4_step_jacobians",
    "rollout",
    "rollout_adjoint",
]

BICYCLE = 0
TRAILER = 1


class VehicleState(NamedTuple):
    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class VehicleModel:
    kind: Literal["bicycle", "trailer"]
    L: float

    def __post_init__(self):
        if self.kind not in ("bicycle", "trailer"):
            raise ValueError(f"unknown vehicle kind {self.kind!r}")
        if not (self.L > 0.0 and math.isfinite(self.L)):
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def code(self) -> int:
        return BICYCLE if self.kind == "bicycle" else TRAILER


def continuous_dynamics(model: VehicleModel, q, u) -> np.ndarray:
    """Right-hand side ``f(q, u)``."""
    theta = q[2]
    c, s = math.cos(theta), math.sin(theta)
    if model.kind == "bicycle":
        v, delta = u[0], u[1]
        return np.array([v * c, v * s, v / model.L * math.tan(delta)])
    ux, uy = u[0], u[1]
    thetadot = (uy * c - ux * s) / model.L
    return np.array([ux + model.L * s * thetadot, uy - model.L * c * thetadot, thetadot])


def dynamics_jacobians(model: VehicleModel, q, u) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(df/dq, df/du)`` as 3x3 and 3x2 arrays."""
    theta = q[2]
    c, s = math.cos(theta), math.sin(theta)
    fq = np.zeros((3, 3))
    fu = np.zeros((3, 2))
    if model.kind == "bicycle":
        v, delta = u[0], u[1]
        fq[0, 2] = -v * s
        fq[1, 2] = v * c
        t = math.tan(delta)
        fu[:, 0] = (c, s, t / model.L)
        fu[2, 1] = v / (model.L * math.cos(delta) ** 2)
        return fq, fu
    ux, uy = u[0], u[1]
    # f = (c*a, s*a, b/L) with a = ux*c + uy*s and b = uy*c - ux*s
    a = ux * c + uy * s
    b = uy * c - ux * s
    fq[0, 2] = -s * a + c * b
    fq[1, 2] = c * a + s * b
    fq[2, 2] = -a / model.L
    fu[:, 0] = (c * c, s * c, -s / model.L)
    fu[:, 1] = (c * s, s * s, c / model.L)
    return fq, fu


def rk4_step(model: VehicleModel, q, u, ts: float) -> np.ndarray:
    """One classical RK4 step with ``u`` held over ``[0, ts]``."""
    if not ts > 0:
        raise ValueError("sampling time must be positive")
    q = np.asarray(q, dtype=float)
    k1 = continuous_dynamics(model, q, u)
    k2 = continuous_dynamics(model, q + 0.5 * ts * k1, u)
    k3 = continuous_dynamics(model, q + 0.5 * ts * k2, u)
    k4 = continuous_dynamics(model, q + ts * k3, u)
    return q + ts / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_jacobians(model: VehicleModel, q, u, ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact Jacobians of the discrete RK4 map, by forward differentiation of its stages."""
    q = np.asarray(q, dtype=float)
    eye = np.eye(3)
    k1 = continuous_dynamics(model, q, u)
    A1, B1 = dynamics_jacobians(model, q, u)
    dk1q, dk1u = A1, B1
    q2 = q + 0.5 * ts * k1
    A2, B2 = dynamics_jacobians(model, q2, u)
    dk2q = A2 @ (eye + 0.5 * ts * dk1q)
    dk2u = A2 @ (0.5 * ts * dk1u) + B2
    k2 = continuous_dynamics(model, q2, u)
    q3 = q + 0.5 * ts * k2
    A3, B3 = dynamics_jacobians(model, q3, u)
    dk3q = A3 @ (eye + 0.5 * ts * dk2q)
    dk3u = A3 @ (0.5 * ts * dk2u) + B3
    k3 = continuous_dynamics(model, q3, u)
    q4 = q + ts * k3
    A4, B4 = dynamics_jacobians(model, q4, u)
    dk4q = A4 @ (eye + ts * dk3q)
    dk4u = A4 @ (ts * dk3u) + B4
    jq = eye + ts / 6.0 * (dk1q + 2.0 * dk2q + 2.0 * dk3q + dk4q)
    ju = ts / 6.0 * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return jq, ju


def _as_inputs(U) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        if U.size % 2:
            raise ValueError("flat control sequence must have even length")
        U = U.reshape(-1, 2)
    if U.ndim != 2 or U.shape[1] != 2:
        raise ValueError(f"controls must have shape (N, 2), got {U.shape}")
    return U


def rollout(model: VehicleModel, q0, U, ts: float) -> np.ndarray:
    """States ``F_0 .. F_N`` as an ``(N+1, 3)`` array with ``F_0 = q0``."""
    U = _as_inputs(U)
    out = np.empty((U.shape[0] + 1, 3))
    out[0] = q0
    for k, u in enumerate(U):
        out[k + 1] = rk4_step(model, out[k], u, ts)
    return out


def rollout_adjoint(model: VehicleModel, q0, U, ts: float, state_grads, input_grads) -> np.ndarray:
    """Total derivative with respect to the stacked controls (length ``2N``).

    ``state_grads[k]`` is the partial of the scalar objective with respect to
    ``F_k`` and ``input_grads[k]`` the partial with respect to ``u_k``.
    """
    U = _as_inputs(U)
    N = U.shape[0]
    state_grads = np.asarray(state_grads, dtype=float)
    input_grads = np.asarray(input_grads, dtype=float)
    if state_grads.shape != (N + 1, 3):
        raise ValueError(f"state_grads must have shape {(N + 1, 3)}, got {state_grads.shape}")
    if input_grads.shape != (N, 2):
        raise ValueError(f"input_grads must have shape {(N, 2)}, got {input_grads.shape}")
    states = rollout(model, q0, U, ts)
    grad = np.empty((N, 2))
    lam = state_grads[N].copy()
    for k in range(N - 1, -1, -1):
        jq, ju = rk4_step_jacobians(model, states[k], U[k], ts)
        grad[k] = input_grads[k] + ju.T @ lam
        lam = state_grads[k] + jq.T @ lam
    return grad.ravel()
