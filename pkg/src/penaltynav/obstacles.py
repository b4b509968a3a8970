"""Obstacles as intersections of smooth inequalities.

An obstacle is the open set ``{z : h_i(z) > 0 for all i}``.  Its obstacle
function ``psi(z) = prod_i max(h_i(z), 0)`` vanishes exactly outside the set,
and ``0.5 * mu * psi**2`` is the quadratic penalty added to the MPC cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .expr import (
    ONE,
    X,
    Y,
    Const,
    ConstraintExpr,
    EvaluationError,
    add,
    mul,
    parse_constraint,
    poly_degree,
    power,
    sub,
)

__all__ = [
    "Position",
    "ObstacleSpec",
    "UnsupportedEnlargement",
    "DEFAULT_ENLARGEMENT",
    "eval_psi",
    "eval_penalty_gradient",
    "psi_values",
    "apply_enlargement",
    "enlarge_constraint",
    "disc",
    "outside_disc",
    "halfspace",
    "rectangle",
    "obstacle_from_text",
]

DEFAULT_ENLARGEMENT = 0.1


class UnsupportedEnlargement(ValueError):
    """No automatic offset rule exists for a constraint."""


class Position(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class ObstacleSpec:
    """One obstacle.

    ``constraints`` define the true obstacle.  ``enlargement`` is the safety
    margin in meters; the set seen by the solver comes from
    :func:`apply_enlargement`, either by the automatic offset rule or from
    ``enlarged`` when the author supplied the inflated expressions directly.
    """

    constraints: tuple[ConstraintExpr, ...]
    enlargement: float = DEFAULT_ENLARGEMENT
    label: str = ""
    enlarged: tuple[ConstraintExpr, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.enlarged is not None:
            object.__setattr__(self, "enlarged", tuple(self.enlarged))
        if len(self.constraints) < 1:
            raise ValueError("an obstacle needs at least one constraint")
        if not (self.enlargement >= 0.0 and math.isfinite(self.enlargement)):
            raise ValueError(f"enlargement must be finite and >= 0, got {self.enlargement}")

    @property
    def m(self) -> int:
        return len(self.constraints)


def _coords(z):
    if isinstance(z, Position):
        return z.x, z.y
    z = np.asarray(z, dtype=float)
    return z[..., 0], z[..., 1]


def psi_values(constraints: Sequence[ConstraintExpr], xs, ys):
    """Hinge product over ``constraints``; broadcasts over array inputs."""
    out = 1.0
    for c in constraints:
        h = c.value(xs, ys)
        out = out * np.maximum(h, 0.0)
    return out


def eval_psi(obstacle: ObstacleSpec, z) -> float:
    """Obstacle function of the constraints stored on ``obstacle``."""
    x, y = _coords(z)
    return float(psi_values(obstacle.constraints, float(x), float(y)))


def eval_penalty_gradient(obstacle: ObstacleSpec, z, mu: float) -> tuple[float, np.ndarray]:
    """Return ``0.5*mu*psi(z)**2`` and its gradient with respect to ``z``."""
    if mu < 0:
        raise ValueError("penalty factor must be nonnegative")
    x, y = _coords(z)
    x, y = float(x), float(y)
    hinge = [max(c.value(x, y), 0.0) for c in obstacle.constraints]
    psi = math.prod(hinge)
    grad = np.zeros(2)
    if psi == 0.0:
        return 0.0, grad
    for i, c in enumerate(obstacle.constraints):
        others = math.prod(h for j, h in enumerate(hinge) if j != i)
        gx, gy = c.gradient(x, y)
        grad[0] += others * gx
        grad[1] += others * gy
    grad *= mu * psi
    value = 0.5 * mu * psi * psi
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise EvaluationError("non-finite obstacle penalty")
    return value, grad


# --------------------------------------------------------------------------
# enlargement


def enlarge_constraint(c: ConstraintExpr, margin: float) -> ConstraintExpr:
    """Offset one constraint outward by ``margin`` meters.

    Affine ``b - a.z`` becomes ``b + margin*|a| - a.z``.  A quadratic with a
    definite Hessian is an ellipse interior (or exterior); its semi-axes are
    grown (or shrunk) by ``margin`` while ``h`` at the center is kept.
    """
    if margin == 0.0:
        return c
    poly = c.polynomial()
    if poly is None or poly_degree(poly) > 2:
        raise UnsupportedEnlargement(f"no offset rule for {c.text!r}; supply enlarged expressions")
    c00 = poly.get((0, 0), 0.0)
    g = np.array([poly.get((1, 0), 0.0), poly.get((0, 1), 0.0)])
    if poly_degree(poly) <= 1:
        norm = float(np.hypot(*g))
        if norm == 0.0:
            return c
        return ConstraintExpr.from_tree(add(c.tree, Const(margin * norm)))

    hess = np.array(
        [[2.0 * poly.get((2, 0), 0.0), poly.get((1, 1), 0.0)],
         [poly.get((1, 1), 0.0), 2.0 * poly.get((0, 2), 0.0)]]
    )
    eig = np.linalg.eigvalsh(hess)
    if eig[0] * eig[1] <= 0.0:
        raise UnsupportedEnlargement(f"quadratic {c.text!r} is not an ellipse; supply enlarged expressions")
    center = -np.linalg.solve(hess, g)
    h_center = c00 + g @ center + 0.5 * center @ hess @ center
    if eig[1] < 0.0:
        # interior of an ellipse: h = k * (1 - (z-p)'E(z-p))
        k, sign = h_center, 1.0
        if k <= 0.0:
            raise UnsupportedEnlargement(f"{c.text!r} describes an empty set")
        shape = -hess / (2.0 * k)
    else:
        # exterior of an ellipse: h = k * ((z-p)'E(z-p) - 1)
        k, sign = -h_center, -1.0
        if k <= 0.0:
            raise UnsupportedEnlargement(f"{c.text!r} holds everywhere; nothing to offset")
        shape = hess / (2.0 * k)
    lam, vec = np.linalg.eigh(shape)
    axes = 1.0 / np.sqrt(lam) + sign * margin
    if np.any(axes <= 0.0):
        raise UnsupportedEnlargement(f"margin {margin} exceeds a semi-axis of {c.text!r}")
    new_shape = vec @ np.diag(1.0 / axes**2) @ vec.T
    tree = _ellipse_tree(center, new_shape, k, sign)
    return ConstraintExpr.from_tree(tree)


def _ellipse_tree(center, shape, k, sign):
    dx = sub(X, Const(float(center[0])))
    dy = sub(Y, Const(float(center[1])))
    quad = add(
        add(mul(Const(float(shape[0, 0])), power(dx, 2)),
            mul(Const(float(2.0 * shape[0, 1])), mul(dx, dy))),
        mul(Const(float(shape[1, 1])), power(dy, 2)),
    )
    inner = sub(ONE, quad) if sign > 0 else sub(quad, ONE)
    return mul(Const(float(k)), inner)


def apply_enlargement(obstacle: ObstacleSpec) -> ObstacleSpec:
    """Return the inflated obstacle the solver works with (enlargement 0)."""
    if obstacle.enlarged is not None:
        cons = obstacle.enlarged
    elif obstacle.enlargement == 0.0:
        return obstacle
    else:
        cons = tuple(enlarge_constraint(c, obstacle.enlargement) for c in obstacle.constraints)
    return ObstacleSpec(cons, 0.0, obstacle.label)


# --------------------------------------------------------------------------
# shape helpers


def disc(cx: float, cy: float, r: float) -> ConstraintExpr:
    """``1 - |z - c|^2 / r^2 > 0``."""
    return parse_constraint(f"1 - ((x - {cx!r})^2 + (y - {cy!r})^2)/{r * r!r}")


def outside_disc(cx: float, cy: float, r: float) -> ConstraintExpr:
    """``|z - c|^2 / r^2 - 1 > 0``, the inner edge of an annulus."""
    return parse_constraint(f"((x - {cx!r})^2 + (y - {cy!r})^2)/{r * r!r} - 1")


def halfspace(a: Sequence[float], b: float) -> ConstraintExpr:
    """``b - a.z > 0``."""
    return parse_constraint(f"{b!r} - ({a[0]!r})*x - ({a[1]!r})*y")


def rectangle(xmin: float, xmax: float, ymin: float, ymax: float) -> list[ConstraintExpr]:
    return [
        parse_constraint(f"x - {xmin!r}"),
        parse_constraint(f"{xmax!r} - x"),
        parse_constraint(f"y - {ymin!r}"),
        parse_constraint(f"{ymax!r} - y"),
    ]


def obstacle_from_text(
    constraints: Sequence[str],
    enlargement: float = DEFAULT_ENLARGEMENT,
    label: str = "",
    enlarged: Sequence[str] | None = None,
) -> ObstacleSpec:
    return ObstacleSpec(
        tuple(parse_constraint(t) for t in constraints),
        enlargement,
        label,
        None if enlarged is None else tuple(parse_constraint(t) for t in enlarged),
    )

