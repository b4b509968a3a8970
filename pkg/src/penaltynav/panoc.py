"""PANOC for smooth objectives over a box.

Each iteration takes a projected-gradient step ``ubar = P(u - gamma*grad)``,
forms the fixed-point residual ``r = (u - ubar)/gamma`` and blends the
projected-gradient update with an L-BFGS direction ``d = -H r``.  The blend
``u - (1-alpha)*gamma*r + alpha*d`` is chosen by backtracking on the
forward-backward envelope.  The Lipschitz estimate is doubled (and ``gamma``
halved) whenever the quadratic upper bound fails at ``ubar``.
"""

from __future__ import annotations

import math
import os
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "PanocConfig",
    "SolveReport",
    "LBFGS",
    "project_box",
    "fixed_point_residual",
    "forward_backward_envelope",
    "lbfgs_direction",
    "estimate_lipschitz",
    "panoc_solve",
]

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"

# initial step as a fraction of 1/L
STEP_FRACTION = 0.95
LINE_SEARCH_EXHAUSTED = "line_search_exhausted"


def _check_descent_default() -> bool:
    return os.environ.get("PENALTYNAV_CHECK_FBE", "") not in ("", "0")


@dataclass
class PanocConfig:
    tolerance: float = 1e-3
    max_iterations: int = 500
    lbfgs_memory: int = 10
    lipschitz: float | str = "auto"
    max_linesearch_halvings: int = 10
    # Re-evaluate and assert the envelope decrease at every accepted step.
    check_descent: bool = field(default_factory=_check_descent_default)

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.lbfgs_memory < 1:
            raise ValueError("L-BFGS memory must be at least 1")
        if self.max_iterations < 1 or self.max_linesearch_halvings < 1:
            raise ValueError("iteration budgets must be positive")
        if self.lipschitz != "auto" and not float(self.lipschitz) > 0:
            raise ValueError("Lipschitz estimate must be positive or 'auto'")


@dataclass
class SolveReport:
    status: str
    residual: float
    iterations: int
    gamma: float
    objective: float
    wall_time: float
    lipschitz: float = math.nan
    evaluations: int = 0
    gamma_updates: int = 0
    fallback_steps: int = 0
    descent_checks: int = 0

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def project_box(u, lower, upper) -> np.ndarray:
    return np.minimum(np.maximum(u, lower), upper)


def fixed_point_residual(u, grad, gamma: float, lower, upper) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(r, ubar)`` with ``ubar = P(u - gamma*grad)`` and ``r = (u - ubar)/gamma``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    ubar = project_box(u - gamma * grad, lower, upper)
    return (u - ubar) / gamma, ubar


def forward_backward_envelope(u, value: float, grad, gamma: float, lower, upper) -> float:
    """``l(u) - gamma/2 |grad|^2 + 1/(2 gamma) dist^2(u - gamma*grad, box)``."""
    w = u - gamma * grad
    dist = w - project_box(w, lower, upper)
    return value - 0.5 * gamma * float(grad @ grad) + float(dist @ dist) / (2.0 * gamma)


def _two_loop(pairs: Sequence[tuple[np.ndarray, np.ndarray, float]], r, scale: float) -> np.ndarray:
    q = np.array(r, dtype=float)
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    if pairs:
        s, y, _ = pairs[-1]
        q *= float(s @ y) / float(y @ y)
    else:
        q *= scale
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def lbfgs_direction(pairs, r, scale: float = 1.0) -> np.ndarray:
    """Two-loop recursion ``d = -H r`` over ``pairs`` of ``(s, y)``, oldest first.

    ``scale`` is the initial inverse Hessian used when ``pairs`` is empty; with
    pairs the usual ``s'y / y'y`` scaling is used.
    """
    prepared = [(np.asarray(s, float), np.asarray(y, float), 1.0 / float(np.dot(s, y))) for s, y in pairs]
    return _two_loop(prepared, r, scale)


class LBFGS:
    """Ring buffer of curvature pairs with the ``s'y > eps |s||y|`` guard."""

    def __init__(self, memory: int, curvature_eps: float = 1e-12):
        if memory < 1:
            raise ValueError("memory must be at least 1")
        self.memory = memory
        self.curvature_eps = curvature_eps
        self.pairs: deque[tuple[np.ndarray, np.ndarray, float]] = deque(maxlen=memory)

    def __len__(self):
        return len(self.pairs)

    def push(self, s, y) -> bool:
        """Store ``(s, y)`` if it carries positive curvature; return whether stored."""
        sy = float(np.dot(s, y))
        if not math.isfinite(sy) or sy <= self.curvature_eps * float(np.linalg.norm(s) * np.linalg.norm(y)):
            return False
        self.pairs.append((np.array(s, dtype=float), np.array(y, dtype=float), 1.0 / sy))
        return True

    def reset(self):
        self.pairs.clear()

    def direction(self, r, scale: float = 1.0) -> np.ndarray:
        return _two_loop(self.pairs, r, scale)


def estimate_lipschitz(fun: Objective, u0, grad0=None, delta: float = 1e-6, floor: float = 1e-10) -> float:
    """``|grad(u0 + delta) - grad(u0)| / |delta|`` with a componentwise ``delta``."""
    u0 = np.asarray(u0, dtype=float)
    if grad0 is None:
        grad0 = fun(u0)[1]
    step = np.full_like(u0, delta)
    g1 = fun(u0 + step)[1]
    est = float(np.linalg.norm(g1 - grad0) / np.linalg.norm(step))
    if not math.isfinite(est):
        raise FloatingPointError("Lipschitz estimate is not finite")
    return max(est, floor)


def panoc_solve(fun: Objective, lower, upper, u0, config: PanocConfig | None = None,
                on_iteration: Callable[[dict], None] | None = None) -> tuple[np.ndarray, SolveReport]:
    """Minimize ``fun`` over the box ``[lower, upper]`` starting at ``u0``.

    ``fun(u)`` returns ``(value, gradient)`` and must be deterministic.  The
    returned point is the last projected-gradient point, which always lies in
    the box.  ``on_iteration`` receives a dict snapshot per iteration.
    """
    cfg = config or PanocConfig()
    t_start = time.perf_counter()
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise ValueError("box bounds out of order")
    u = np.array(u0, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial point must be finite")

    n_eval = 0

    def evaluate(x):
        nonlocal n_eval
        n_eval += 1
        return fun(x)

    f, g = evaluate(u)
    if not math.isfinite(f):
        raise FloatingPointError("objective is not finite at the initial point")
    if cfg.lipschitz == "auto":
        lip = estimate_lipschitz(evaluate, u, g)
    else:
        lip = float(cfg.lipschitz)
    gamma = STEP_FRACTION / lip
    # sigma below gamma*(1 - gamma*L)/2 so a pure projected-gradient step always qualifies
    sigma = 0.45 * gamma * (1.0 - gamma * lip)

    mem = LBFGS(cfg.lbfgs_memory)
    u_prev = r_prev = None
    gamma_updates = fallbacks = checks = 0
    status = MAX_ITERATIONS
    ubar, fbar, residual = project_box(u, lower, upper), f, math.inf

    it = 0
    for it in range(cfg.max_iterations):
        # projected-gradient point, with the Lipschitz test on it
        while True:
            ubar = project_box(u - gamma * g, lower, upper)
            r = (u - ubar) / gamma
            fbar, gbar = evaluate(ubar)
            gr = float(g @ r)
            rr = float(r @ r)
            bound = f - gamma * gr + 0.5 * lip * gamma * gamma * rr
            if fbar <= bound + 1e-12 * (1.0 + abs(f)):
                break
            if gamma_updates >= 200:
                raise FloatingPointError("Lipschitz estimate diverged")
            gamma *= 0.5
            lip *= 2.0
            sigma *= 0.5
            gamma_updates += 1
            mem.reset()
            u_prev = r_prev = None

        if u_prev is not None:
            mem.push(u - u_prev, r - r_prev)
        u_prev, r_prev = u, r

        rnorm = float(np.max(np.abs(r))) if r.size else 0.0
        residual = rnorm
        if on_iteration is not None:
            on_iteration({"iteration": it, "u": u, "ubar": ubar, "residual": rnorm,
                          "gamma": gamma, "lipschitz": lip, "sigma": sigma, "value": f})
        # ubar is the point handed back, and its gradient is already known
        rbar = (ubar - project_box(ubar - gamma * gbar, lower, upper)) / gamma
        residual = float(np.max(np.abs(rbar))) if rbar.size else 0.0
        if residual <= cfg.tolerance:
            status = CONVERGED
            # count the forward-backward step that produced ubar
            it += 1
            break

        phi = forward_backward_envelope(u, f, g, gamma, lower, upper)
        target = phi - sigma * rr
        d = mem.direction(r, scale=gamma)
        alpha = 1.0
        accepted = False
        for _ in range(cfg.max_linesearch_halvings):
            u_new = u - (1.0 - alpha) * gamma * r + alpha * d
            f_new, g_new = evaluate(u_new)
            if math.isfinite(f_new):
                # far-out candidates can carry huge gradients; they simply fail the test
                with np.errstate(over="ignore", invalid="ignore"):
                    phi_new = forward_backward_envelope(u_new, f_new, g_new, gamma, lower, upper)
                if phi_new <= target:
                    accepted = True
                    break
            alpha *= 0.5
        if accepted:
            if cfg.check_descent:
                f_chk, g_chk = fun(u_new)
                phi_chk = forward_backward_envelope(u_new, f_chk, g_chk, gamma, lower, upper)
                assert phi_chk <= phi - sigma * rr, (
                    f"envelope increased at iteration {it}: {phi_chk} > {phi} - {sigma}*{rr}"
                )
                checks += 1
        else:
            # pure projected-gradient step
            fallbacks += 1
            u_new, f_new, g_new = ubar, fbar, gbar
            mem.reset()
            u_prev = r_prev = None
            if np.array_equal(u_new, u):
                status = LINE_SEARCH_EXHAUSTED
                residual = rnorm
                break
        u, f, g = u_new, f_new, g_new
    else:
        it = cfg.max_iterations

    if status != CONVERGED:
        # report the residual at the point being returned
        rbar = (ubar - project_box(ubar - gamma * evaluate(ubar)[1], lower, upper)) / gamma
        residual = float(np.max(np.abs(rbar))) if rbar.size else 0.0
    report = SolveReport(
        status=status,
        residual=residual,
        iterations=it,
        gamma=gamma,
        objective=float(fbar),
        wall_time=time.perf_counter() - t_start,
        lipschitz=lip,
        evaluations=n_eval,
        gamma_updates=gamma_updates,
        fallback_steps=fallbacks,
        descent_checks=checks,
    )
    return ubar, report
