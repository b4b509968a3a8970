"""Quadratic penalty loop around PANOC, with warm starting between solves."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .objective import ProblemSpec, max_obstacle_violation, uniform_penalty
from .panoc import PanocConfig, SolveReport, panoc_solve

__all__ = [
    "PenaltyConfig",
    "PenaltyOutcome",
    "default_tau_schedule",
    "penalty_solve",
    "shift_warm_start",
    "FEASIBLE",
    "CAPPED_INFEASIBLE",
    "RESIDUAL_FAIL",
]

FEASIBLE = "feasible"
CAPPED_INFEASIBLE = "capped_infeasible"
RESIDUAL_FAIL = "residual_fail"


def default_tau_schedule(k: int, tau_star: float) -> float:
    return max(tau_star, 0.1 * 0.25**k)


@dataclass
class PenaltyConfig:
    mu0: float = 1.0
    omega: float = 10.0
    eta_star: float = 1e-2
    tau_star: float = 1e-3
    mu_cap: float = 1e4
    max_outer_iterations: int = 20
    tau_schedule: Callable[[int, float], float] = default_tau_schedule
    panoc: PanocConfig = field(default_factory=PanocConfig)

    def __post_init__(self):
        if not self.omega > 1.0:
            raise ValueError("omega must exceed 1")
        if not (self.eta_star > 0 and self.tau_star > 0 and self.mu0 > 0):
            raise ValueError("mu0, eta_star and tau_star must be positive")
        if self.mu_cap < self.mu0:
            raise ValueError("mu_cap must be at least mu0")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be positive")

    def tau(self, k: int) -> float:
        return max(self.tau_schedule(k, self.tau_star), self.tau_star)


@dataclass
class PenaltyOutcome:
    controls: np.ndarray
    mu: np.ndarray
    status: str
    violation: float
    residual: float
    outer_iterations: int
    inner_iterations: int
    wall_time: float
    reports: list[SolveReport] = field(default_factory=list)
    # max violation after each outer iteration
    history: list[float] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def penalty_solve(spec: ProblemSpec, mu_init, u_init, config: PenaltyConfig | None = None,
                  on_outer: Callable[[int, np.ndarray, np.ndarray], None] | None = None) -> PenaltyOutcome:
    """Raise penalty factors by ``omega`` until residual and violation tolerances hold.

    Each inner PANOC solve is warm-started at the previous solution.  Factors
    are only raised while the violation exceeds ``eta_star``; otherwise the
    next pass just tightens the inner tolerance.  The
    factors are clamped at ``mu_cap``; once every factor sits at the cap and
    the violation still exceeds ``eta_star`` the loop gives up with
    ``capped_infeasible`` and the last iterate.  ``on_outer(k, u, mu)`` is
    called after each inner solve.
    """
    cfg = config or PenaltyConfig()
    t0 = time.perf_counter()
    mu = np.array(mu_init if mu_init is not None else uniform_penalty(spec.n_obstacles, spec.N, cfg.mu0),
                  dtype=float).reshape(spec.n_obstacles, spec.N)
    if np.any(mu < 0.0) or np.any(mu > cfg.mu_cap):
        raise ValueError("initial penalty factors must lie in [0, mu_cap]")
    u = np.array(u_init, dtype=float).reshape(-1)
    lower, upper = spec.bounds()
    kernel = spec.kernel
    reports: list[SolveReport] = []
    history: list[float] = []
    inner = 0
    status = RESIDUAL_FAIL
    violation = math.inf
    residual = math.inf

    k = 0
    for k in range(cfg.max_outer_iterations):
        mu_k = np.ascontiguousarray(mu)
        grad = np.empty(spec.n_vars)

        def fun(x, mu_k=mu_k):
            v = kernel.value_grad(mu_k, x, grad)
            return v, grad.copy()

        # Without obstacles there is nothing to raise; solve to the final tolerance at once.
        tau_k = cfg.tau(k) if spec.n_obstacles else cfg.tau_star
        inner_cfg = _with_tolerance(cfg.panoc, tau_k)
        u, report = panoc_solve(fun, lower, upper, u, inner_cfg)
        reports.append(report)
        inner += report.iterations
        residual = report.residual
        _, violation = max_obstacle_violation(spec, u)
        history.append(violation)
        if on_outer is not None:
            on_outer(k, u, mu)
        if residual <= cfg.tau_star and violation <= cfg.eta_star:
            status = FEASIBLE
            break
        if violation > cfg.eta_star and np.all(mu >= cfg.mu_cap):
            status = CAPPED_INFEASIBLE
            break
        if violation > cfg.eta_star:
            mu = np.minimum(cfg.omega * mu, cfg.mu_cap)
    return PenaltyOutcome(
        controls=u,
        mu=mu,
        status=status,
        violation=violation,
        residual=residual,
        outer_iterations=k + 1,
        inner_iterations=inner,
        wall_time=time.perf_counter() - t0,
        reports=reports,
        history=history,
    )


def _with_tolerance(cfg: PanocConfig, tol: float) -> PanocConfig:
    return PanocConfig(
        tolerance=tol,
        max_iterations=cfg.max_iterations,
        lbfgs_memory=cfg.lbfgs_memory,
        lipschitz=cfg.lipschitz,
        max_linesearch_halvings=cfg.max_linesearch_halvings,
        check_descent=cfg.check_descent,
    )


def shift_warm_start(u_prev, mu_prev) -> tuple[np.ndarray, np.ndarray]:
    """Drop the first stage, append a zero input and a column of unit factors."""
    U = np.asarray(u_prev, dtype=float)
    flat = U.ndim == 1
    U2 = U.reshape(-1, 2)
    shifted = np.vstack([U2[1:], np.zeros((1, 2))])
    mu = np.asarray(mu_prev, dtype=float)
    mu_shift = np.hstack([mu[:, 1:], np.ones((mu.shape[0], 1))])
    return (shifted.reshape(-1) if flat else shifted), mu_shift
