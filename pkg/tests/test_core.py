import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qotgd import measures as qm
from qotgd.core import (DualPair, GdConfig, SolveTrace, delta_n, dual_gradient, dual_objective,
                        gd_step, lipschitz_witness, project_balanced, schrodinger_residual, solve)

from oracles import fd_gradient, objective_loops
from conftest import random_instance

D0, D1 = qm.dirac(0.0), qm.dirac(1.0)
C01 = qm.cost_matrix(D0, D1)


def pair(f, g):
    return DualPair([f], [g])


# -- projection ---------------------------------------------------------------

def test_project_examples():
    P = qm.make_discrete([0.0, 1.0, 2.0], [1, 2, 3])
    Q = qm.make_discrete([0.5, 1.5], [1, 1])
    out = project_balanced(DualPair(np.ones(3), np.zeros(2)), P, Q)
    np.testing.assert_allclose(out.f, 0.5)
    np.testing.assert_allclose(out.g, 0.5)
    out = project_balanced(DualPair(np.zeros(3), np.full(2, 0.2)), P, Q)
    np.testing.assert_allclose(out.f, 0.1)
    np.testing.assert_allclose(out.g, 0.1)
    again = project_balanced(out, P, Q)
    np.testing.assert_allclose(again.f, out.f, rtol=0, atol=1e-15)


def test_project_rejects_bad_input():
    with pytest.raises(ValueError):
        project_balanced(DualPair([np.nan], [0.0]), D0, D1)
    with pytest.raises(ValueError):
        project_balanced(DualPair([0.0, 1.0], [0.0]), D0, D1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_is_orthogonal_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    P, Q, _ = random_instance(rng)
    x = DualPair(rng.normal(size=len(P)), rng.normal(size=len(Q)))
    px = project_balanced(x, P, Q)
    assert px.is_balanced(P, Q, 1e-12)
    ppx = project_balanced(px, P, Q)
    np.testing.assert_allclose(ppx.stacked(), px.stacked(), atol=1e-14)
    # residual x - proj(x) is orthogonal to every balanced vector
    y = project_balanced(DualPair(rng.normal(size=len(P)), rng.normal(size=len(Q))), P, Q)
    r = x - px
    inner = P.weights @ (r.f * y.f) + Q.weights @ (r.g * y.g)
    assert abs(inner) <= 1e-12 * (1 + np.abs(x.stacked()).max())


# -- objective and gradient examples ------------------------------------------

def test_objective_examples():
    z = qm.dirac(0.0)
    C = qm.cost_matrix(z, z)
    assert dual_objective(pair(0, 0), z, z, C, 1.0) == 0.0
    assert dual_objective(pair(0.1, 0.1), z, z, C, 0.2) == pytest.approx(0.1, abs=1e-15)
    for eps in (0.01, 1.0, 7.0):
        assert dual_objective(pair(0, 0), D0, D1, C01, eps) == 0.0


def test_objective_matches_loops(rng):
    for _ in range(5):
        P, Q, C = random_instance(rng, n=7, m=6)
        x = DualPair(rng.uniform(0, 0.8, len(P)), rng.uniform(0, 0.8, len(Q)))
        ref = objective_loops(x.f, x.g, P.points, P.weights, Q.points, Q.weights, 0.3)
        assert dual_objective(x, P, Q, C, 0.3) == pytest.approx(ref, rel=1e-13, abs=1e-14)


def test_gradient_examples():
    g = dual_gradient(pair(0, 0), D0, D1, C01, 0.1)
    assert (g.f[0], g.g[0]) == (1.0, 1.0)


def test_gradient_matches_finite_differences(rng):
    checked = 0
    while checked < 5:
        P, Q, C = random_instance(rng, n=8, m=7)
        eps = rng.uniform(0.05, 1.0)
        x = DualPair(rng.uniform(0, 0.6, len(P)), rng.uniform(0, 0.6, len(Q)))
        if np.min(np.abs(np.add.outer(x.f, x.g) - C)) < 1e-4:
            continue
        fd = fd_gradient(x.f, x.g, P.points, P.weights, Q.points, Q.weights, eps)
        an = dual_gradient(x, P, Q, C, eps).stacked()
        np.testing.assert_allclose(an, fd, rtol=1e-6, atol=1e-6)
        checked += 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_is_balanced(seed):
    rng = np.random.default_rng(seed)
    P, Q, C = random_instance(rng)
    x = DualPair(rng.uniform(-1, 1, len(P)), rng.uniform(-1, 1, len(Q)))
    g = dual_gradient(x, P, Q, C, 0.3)
    assert abs(g.imbalance(P, Q)) <= 1e-12 * max(1.0, np.abs(g.stacked()).max())


# -- single steps -------------------------------------------------------------

def test_gd_step_hand_iteration():
    cfg = GdConfig(0.1, 0.05, init=0.0)
    x = gd_step(pair(0, 0), D0, D1, C01, cfg)
    assert (x.f[0], x.g[0]) == pytest.approx((0.05, 0.05))
    x = gd_step(x, D0, D1, C01, cfg)
    assert (x.f[0], x.g[0]) == pytest.approx((0.1, 0.1))
    x = gd_step(x, D0, D1, C01, cfg)
    assert (x.f[0], x.g[0]) == pytest.approx((0.15, 0.15))


def test_gd_step_fixed_point():
    cfg = GdConfig(0.1, 0.05)
    star = pair(0.3, 0.3)
    assert schrodinger_residual(star, D0, D1, C01, 0.1) <= 1e-12
    x = gd_step(star, D0, D1, C01, cfg)
    assert abs(x.f[0] - 0.3) <= 1e-12 and abs(x.g[0] - 0.3) <= 1e-12


def test_delta_n_examples():
    z = qm.dirac(0.0)
    assert delta_n(pair(1, 2), pair(1, 2), z, z) == 0.0
    assert delta_n(pair(0, 0), pair(3, 4), z, z) == pytest.approx(5.0)


def test_residual_example():
    assert schrodinger_residual(pair(0, 0), D0, D1, C01, 0.1) == pytest.approx(0.1 * np.sqrt(2))


def test_lipschitz_example():
    r = lipschitz_witness(pair(0, 0), pair(0.3, 0.3), D0, D1, C01, 0.1)
    assert r == pytest.approx(1 / 0.3)
    with pytest.raises(ValueError):
        lipschitz_witness(pair(0, 0), pair(0, 0), D0, D1, C01, 0.1)


# -- config -------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(epsilon=0, eta=0.1), dict(epsilon=0.1, eta=-1),
                                dict(epsilon=0.1, eta=0.05, tol=0), dict(epsilon=0.1, eta=0.05, max_iters=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        GdConfig(**kw)


def test_config_warns_above_epsilon():
    with pytest.warns(RuntimeWarning):
        GdConfig(0.1, 0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert GdConfig(0.1, 0.1).ratio == 1.0


# -- solve --------------------------------------------------------------------

def test_solve_dirac_pair():
    dual, trace = solve(D0, D1, C01, GdConfig(0.1, 0.09, tol=1e-10))
    assert trace.status == "converged"
    assert schrodinger_residual(dual, D0, D1, C01, 0.1) <= 1e-9
    assert dual.f[0] == pytest.approx(0.3, abs=1e-9)
    assert dual.g[0] == pytest.approx(0.3, abs=1e-9)


def test_solve_reports_max_iters():
    _, trace = solve(D0, D1, C01, GdConfig(0.1, 0.001, max_iters=5))
    assert trace.status == "max_iters" and len(trace) == 5


def test_solve_reports_divergence():
    # moderate ratios above one oscillate boundedly; an absurd step overflows
    P = qm.make_discrete([0.0, 0.1], [1, 1])
    Q = qm.make_discrete([0.05, 0.2], [1, 1])
    C = qm.cost_matrix(P, Q)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = GdConfig(0.1, 1e200, max_iters=10_000)
        _, trace = solve(P, Q, C, cfg)
    assert trace.status == "diverged"
    assert len(trace) < 10_000


def test_trace_shapes(desk):
    P, Q, C = desk
    dual, trace = solve(P, Q, C, GdConfig(0.1, 0.05, max_iters=50), record_iterates=True)
    assert isinstance(trace, SolveTrace)
    assert len(trace.delta) == len(trace.gamma) == len(trace.supnorm_step) == len(trace.seconds) == 50
    assert len(trace.iterates) == 51
    assert all(d >= 0 for d in trace.delta)
    assert trace.gamma[-1] == pytest.approx(dual_objective(dual, P, Q, C, 0.1), rel=1e-14)
    for k in (0, 10, 49):
        assert trace.delta[k] == pytest.approx(
            delta_n(trace.iterates[k], trace.iterates[k + 1], P, Q), rel=1e-9)


def test_exp1_desk_trace_invariants(desk, desk_star):
    P, Q, C = desk
    eps, eta = 0.1, 0.05
    dual, trace = solve(P, Q, C, GdConfig(eps, eta), record_iterates=True)
    assert trace.status == "converged"
    it = trace.iterates
    # balance
    assert max(abs(x.imbalance(P, Q)) for x in it) <= 1e-10
    # monotone objective
    gam = np.array([trace.gamma0] + trace.gamma)
    assert np.all(np.diff(gam) >= -1e-12)
    # residual decreases
    res = [schrodinger_residual(x, P, Q, C, eps) for x in it]
    assert np.all(np.diff(res) <= 1e-15)
    # sup-norm distance to the optimum does not grow
    sup = [max(np.abs(x.f - desk_star.f).max(), np.abs(x.g - desk_star.g).max()) for x in it]
    assert np.all(np.diff(sup) <= 1e-12)
    # discrete Lipschitz constants stay within the support diameters (constant start, L0 = 0)
    dx = np.diff(P.points[:, 0])
    dy = np.diff(Q.points[:, 0])
    diam_P = np.ptp(P.points[:, 0])
    diam_Q = np.ptp(Q.points[:, 0])
    for x in it:
        assert np.max(np.abs(np.diff(x.f)) / dx) <= diam_P + 1e-8
        assert np.max(np.abs(np.diff(x.g)) / dy) <= diam_Q + 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
def test_monotone_objective_random(seed, ratio):
    rng = np.random.default_rng(seed)
    P, Q, C = random_instance(rng, n=10, m=12)
    eps = 0.2
    _, trace = solve(P, Q, C, GdConfig(eps, ratio * eps, max_iters=300))
    gam = np.array([trace.gamma0] + trace.gamma)
    assert np.all(np.diff(gam) >= -1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.02, 2.0))
def test_lipschitz_bound_random(seed, eps):
    rng = np.random.default_rng(seed)
    P, Q, C = random_instance(rng)
    a = project_balanced(DualPair(rng.normal(size=len(P)), rng.normal(size=len(Q))), P, Q)
    b = project_balanced(DualPair(rng.normal(size=len(P)), rng.normal(size=len(Q))), P, Q)
    assert lipschitz_witness(a, b, P, Q, C, eps) <= 2 / eps + 1e-9


def test_solve_accepts_dual_init(desk, desk_star):
    P, Q, C = desk
    dual, trace = solve(P, Q, C, GdConfig(0.1, 0.05, init=desk_star))
    assert trace.status == "converged" and len(trace) <= 2
    with pytest.raises(ValueError):
        solve(P, Q, C, GdConfig(0.1, 0.05, init=DualPair([0.0], [0.0])))
