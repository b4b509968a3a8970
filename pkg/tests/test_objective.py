import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from penaltynav.dynamics import VehicleModel, VehicleState, rollout
from penaltynav.expr import parse_constraint
from penaltynav.objective import (
    CostWeights,
    InputBox,
    ProblemSpec,
    eval_objective,
    eval_objective_gradient,
    max_obstacle_violation,
    psi_matrix,
    trajectory,
    uniform_penalty,
)
from penaltynav.obstacles import ObstacleSpec, disc, eval_psi, obstacle_from_text, rectangle

CRESCENT = obstacle_from_text(["4*(y - 1 - x^2)", "4*(2 + x^2/2 - y)"], enlargement=0.0)
DISC = ObstacleSpec((disc(0.5, 1.8, 0.4),), enlargement=0.0)
BOX = ObstacleSpec(tuple(rectangle(-0.6, -0.1, 0.8, 1.4)), enlargement=0.0)


def make_spec(kind="trailer", N=10, obstacles=(CRESCENT,), q0=(0.0, 1.5, math.pi), ts=0.05, weights=None):
    return ProblemSpec(
        VehicleModel(kind, 0.5), ts, N, weights or CostWeights(q_ref=(1.0, 4.0, math.pi)),
        tuple(obstacles), InputBox((-4, -4), (4, 4)) if kind == "trailer" else InputBox((-0.1, -1), (4, 1)),
        VehicleState(*q0),
    )


def direct_cost(spec, mu, U):
    """Independent summation of the tracking and penalty terms."""
    w = spec.weights
    U = np.asarray(U, dtype=float).reshape(-1, 2)
    F = rollout(spec.model, spec.q0, U, spec.ts)
    total = 0.0
    for k in range(spec.N):
        e = F[k] - np.asarray(w.q_ref)
        du = U[k] - np.asarray(w.u_ref)
        total += e @ w.Q @ e + du @ np.diag(w.R) @ du
    e = F[spec.N] - np.asarray(w.q_ref)
    total += e @ w.QN @ e
    for i, obs in enumerate(spec.obstacles):
        for k in range(1, spec.N + 1):
            total += 0.5 * mu[i, k - 1] * eval_psi(obs, F[k, :2]) ** 2
    return total


def fd_grad(spec, mu, u, h=1e-6):
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        g[i] = (eval_objective(spec, mu, u + e) - eval_objective(spec, mu, u - e)) / (2 * h)
    return g


def with_kernel(spec, cls):
    spec.__dict__["kernel"] = spec.make_kernel(cls)
    return spec


def test_zero_cost_at_reference():
    spec = make_spec("bicycle", obstacles=(), q0=(1.0, 4.0, math.pi))
    assert eval_objective(spec, uniform_penalty(0, spec.N), np.zeros(spec.n_vars)) == 0.0


def test_mu_zero_equals_tracking_oracle(backend, rng):
    spec = with_kernel(make_spec(), backend)
    mu = np.zeros((1, spec.N))
    for _ in range(5):
        u = rng.uniform(-2, 2, spec.n_vars)
        assert eval_objective(spec, mu, u) == pytest.approx(direct_cost(spec, mu, u), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("kind", ["trailer", "bicycle"])
def test_objective_matches_summation_oracle(backend, kind, rng):
    spec = with_kernel(make_spec(kind, obstacles=(CRESCENT, DISC, BOX)), backend)
    for _ in range(5):
        mu = rng.uniform(0, 100, (3, spec.N))
        u = rng.uniform(-1, 1, spec.n_vars)
        assert eval_objective(spec, mu, u) == pytest.approx(direct_cost(spec, mu, u), rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kind", ["trailer", "bicycle"])
def test_gradient_matches_finite_differences(backend, kind, seed):
    rng = np.random.default_rng(seed)
    spec = with_kernel(make_spec(kind, obstacles=(CRESCENT, DISC)), backend)
    mu = rng.uniform(1, 100, (2, spec.N))
    u = rng.uniform(-1, 1, spec.n_vars)
    _, g = eval_objective_gradient(spec, mu, u)
    fd = fd_grad(spec, mu, u)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


def test_gradient_without_penetration_equals_tracking_gradient(backend, rng):
    spec = with_kernel(make_spec(), backend)
    free = with_kernel(make_spec(obstacles=()), backend)
    for _ in range(5):
        u = rng.uniform(-1, 1, spec.n_vars)
        _, g0 = eval_objective_gradient(spec, np.zeros((1, spec.N)), u)
        _, g1 = eval_objective_gradient(free, np.zeros((0, spec.N)), u)
        assert np.array_equal(g0, g1)


def test_backends_agree(rng):
    from penaltynav.kernels import available_backends, kernel_class

    if len(available_backends()) < 2:
        pytest.skip("compiled extension not built")
    a = with_kernel(make_spec(obstacles=(CRESCENT, DISC, BOX)), kernel_class("compiled"))
    b = with_kernel(make_spec(obstacles=(CRESCENT, DISC, BOX)), kernel_class("python"))
    for _ in range(10):
        mu = rng.uniform(0, 1e3, (3, a.N))
        u = rng.uniform(-3, 3, a.n_vars)
        va, ga = eval_objective_gradient(a, mu, u)
        vb, gb = eval_objective_gradient(b, mu, u)
        assert va == pytest.approx(vb, rel=1e-12)
        assert np.allclose(ga, gb, rtol=1e-10, atol=1e-10 * max(1.0, np.abs(ga).max()))
        assert np.allclose(trajectory(a, u), trajectory(b, u), rtol=0, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.permutations([0, 1, 2]), st.integers(0, 2**31 - 1))
def test_objective_invariant_under_obstacle_permutation(perm, seed):
    rng = np.random.default_rng(seed)
    obs = (CRESCENT, DISC, BOX)
    a = make_spec(obstacles=obs)
    b = make_spec(obstacles=tuple(obs[i] for i in perm))
    mu = rng.uniform(0, 100, (3, a.N))
    u = rng.uniform(-2, 2, a.n_vars)
    va, ga = eval_objective_gradient(a, mu, u)
    vb, gb = eval_objective_gradient(b, mu[list(perm)], u)
    assert vb == pytest.approx(va, rel=1e-12)
    assert np.allclose(ga, gb, rtol=1e-10, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 50))
def test_penalty_part_is_linear_in_mu(seed, c):
    rng = np.random.default_rng(seed)
    spec = make_spec(obstacles=(CRESCENT, DISC))
    u = rng.uniform(-2, 2, spec.n_vars)
    mu = rng.uniform(0, 10, (2, spec.N))
    base = eval_objective(spec, 0 * mu, u)
    p1 = eval_objective(spec, mu, u) - base
    p2 = eval_objective(spec, c * mu, u) - base
    assert p1 >= 0.0
    assert p2 == pytest.approx(c * p1, rel=1e-9, abs=1e-9)


def test_violation_outside_is_zero():
    spec = make_spec("bicycle", obstacles=(DISC,), q0=(0.0, -3.0, 0.0))
    per, worst = max_obstacle_violation(spec, np.tile([1.0, 0.0], spec.N))
    assert worst == 0.0 and np.array_equal(per, np.zeros(spec.N))


def test_violation_through_disc_centre_at_stage_three():
    unit = ObstacleSpec((parse_constraint("1 - (x - 0.3)^2 - y^2"),), enlargement=0.0)
    spec = make_spec("bicycle", N=6, obstacles=(unit,), q0=(0.0, 0.0, 0.0), ts=0.1)
    per, worst = max_obstacle_violation(spec, np.tile([1.0, 0.0], spec.N))
    assert worst == pytest.approx(1.0, abs=1e-14)
    assert int(np.argmax(per)) == 2  # stage 3


def test_violation_matches_pointwise_oracle(rng):
    spec = make_spec(N=30)
    for _ in range(5):
        u = rng.uniform(-4, 4, spec.n_vars)
        per, worst = max_obstacle_violation(spec, u)
        F = trajectory(spec, u)
        brute = np.array([eval_psi(CRESCENT, F[k, :2]) for k in range(1, spec.N + 1)])
        assert np.allclose(per, brute, rtol=1e-12, atol=0)
        assert worst == pytest.approx(brute.max(), rel=1e-12, abs=0)


def test_psi_matrix_shape():
    m = psi_matrix([CRESCENT, DISC], np.array([0.0, 0.5]), np.array([1.5, 1.8]))
    assert m.shape == (2, 2)
    assert m[1, 1] == pytest.approx(1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        make_spec(N=0)
    with pytest.raises(ValueError):
        make_spec(ts=-0.1)
    with pytest.raises(ValueError):
        CostWeights(R=np.array([0.1, 0.0]))
    with pytest.raises(ValueError):
        CostWeights(Q=np.array([[1, 2, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(ValueError):
        CostWeights(Q=-np.eye(3))
    with pytest.raises(ValueError):
        InputBox((1, 0), (0, 1))
    spec = make_spec()
    with pytest.raises(ValueError):
        eval_objective(spec, -np.ones((1, spec.N)), np.zeros(spec.n_vars))
    with pytest.raises(ValueError):
        eval_objective(spec, np.ones((1, spec.N)), np.zeros(spec.n_vars + 2))


def test_default_terminal_weight():
    w = CostWeights()
    assert np.array_equal(w.QN, 10 * w.Q)
    assert np.array_equal(w.Q, np.diag([1.0, 1.0, 0.1]))
    assert np.array_equal(w.R, [0.1, 0.1])
