import numpy as np
import pytest

from qotgd import measures as qm
from qotgd.closed_form import full_support_potentials
from qotgd.core import DualPair, GdConfig, dual_objective, solve
from qotgd.primal import (coupling_density, marginal_residual, max_support_displacement,
                          primal_objective, support_fraction, write_dense_csv, write_sparse_csv)
from qotgd import io as qio

from conftest import converged, random_instance, two_point_instances
from oracles import brute_force_2x2

SYM = qm.make_discrete([-1.0, 1.0], [1, 1])


def test_density_examples():
    z = qm.dirac(0.0)
    cp = coupling_density(DualPair([0.1], [0.1]), z, z, qm.cost_matrix(z, z), 0.2)
    assert cp.density[0, 0] == pytest.approx(1.0)
    C = qm.cost_matrix(SYM, SYM)
    cp = coupling_density(DualPair([-1.0, -1.0], [0.0, 0.0]), SYM, SYM, C, 0.3)
    assert not cp.density.any()
    assert marginal_residual(cp) == (1.0, 1.0)
    assert support_fraction(cp) == 0.0
    with pytest.raises(ValueError):
        coupling_density(DualPair([0.0, 0.0], [0.0, 0.0]), SYM, SYM, C, 0.0)


def test_primal_examples():
    z = qm.dirac(0.0)
    cp = coupling_density(DualPair([0.1], [0.1]), z, z, qm.cost_matrix(z, z), 0.2)
    assert primal_objective(cp, qm.cost_matrix(z, z), 0.2) == pytest.approx(0.1)

    P, Q = qm.dirac(0.0), qm.dirac(1.0)
    C = qm.cost_matrix(P, Q)
    d = DualPair([0.3], [0.3])
    cp = coupling_density(d, P, Q, C, 0.1)
    assert primal_objective(cp, C, 0.1) == pytest.approx(0.55)
    assert dual_objective(d, P, Q, C, 0.1) == pytest.approx(0.55)

    C = qm.cost_matrix(SYM, SYM)
    d = full_support_potentials(SYM, SYM, 2.0)
    cp = coupling_density(d, SYM, SYM, C, 2.0)
    assert primal_objective(cp, C, 2.0) == pytest.approx(1.75)
    assert dual_objective(d, SYM, SYM, C, 2.0) == pytest.approx(1.75)
    assert support_fraction(cp) == 1.0


@pytest.mark.parametrize("name, P, Q, eps", two_point_instances() + [
    ("symmetric-wide", SYM, SYM, 2.0),
])
def test_recovered_coupling_beats_enumeration(name, P, Q, eps):
    C = qm.cost_matrix(P, Q)
    dual, _ = converged(P, Q, C, eps)
    cp = coupling_density(dual, P, Q, C, eps)
    assert max(marginal_residual(cp)) <= 1e-8
    if len(P) == len(Q) == 2:
        oracle = brute_force_2x2(P.points[:, 0], P.weights, Q.points[:, 0], Q.weights, eps)
        assert primal_objective(cp, C, eps) <= oracle + 1e-10


def test_strong_duality_random(rng):
    for _ in range(5):
        P, Q, C = random_instance(rng, n=15, m=12)
        eps = 0.05
        dual, _ = converged(P, Q, C, eps, ratio=0.9)
        cp = coupling_density(dual, P, Q, C, eps)
        gam = dual_objective(dual, P, Q, C, eps)
        assert max(marginal_residual(cp)) <= 1e-8
        assert abs(primal_objective(cp, C, eps) - gam) <= 1e-8 * (1 + abs(gam))


def test_marginal_residual_tracks_schrodinger(desk, desk_star):
    P, Q, C = desk
    cp = coupling_density(desk_star, P, Q, C, 0.1)
    assert max(marginal_residual(cp)) <= 1e-8
    assert np.all(cp.density >= 0)
    assert np.all(cp.masses() >= 0)
    np.testing.assert_allclose(cp.masses().sum(), 1.0, atol=1e-9)


def test_support_shrinks_on_diagonal():
    # equal marginals: the support hugs the diagonal ever more tightly
    P = qm.uniform_grid(0.0, 1.0, 0.0, 1.0, 0.01)
    C = qm.cost_matrix(P, P)
    init = 0.5
    widths, fracs = [], []
    for eps in (0.1, 0.01, 0.001):
        dual, trace = solve(P, P, C, GdConfig(eps, 0.5 * eps, init=init))
        assert trace.status == "converged"
        cp = coupling_density(dual, P, P, C, eps)
        widths.append(max_support_displacement(cp))
        fracs.append(support_fraction(cp))
        init = dual
    assert widths[0] > widths[1] > widths[2]
    assert fracs[0] > fracs[1] > fracs[2]


def test_exports(tmp_path):
    C = qm.cost_matrix(SYM, SYM)
    cp = coupling_density(full_support_potentials(SYM, SYM, 2.0), SYM, SYM, C, 2.0)
    write_dense_csv(cp, tmp_path / "dense.csv")
    rows = qio.read_table(tmp_path / "dense.csv")
    assert list(rows[0]) == ["y0", "y1"]
    assert float(rows[1]["y1"]) == pytest.approx(1.5)
    write_sparse_csv(cp, tmp_path / "sparse.csv")
    rows = qio.read_table(tmp_path / "sparse.csv")
    assert len(rows) == 4
    assert rows[1] == {"i": "0", "j": "1", "x_i": "-1.0", "y_j": "1.0", "density": "0.5"}

    sparse = coupling_density(DualPair([0.0, 0.0], [0.2, 0.2]), SYM, SYM, C, 0.5)
    write_sparse_csv(sparse, tmp_path / "s2.csv")
    assert len(qio.read_table(tmp_path / "s2.csv")) == 2
