import numpy as np
import pytest

from qotgd import measures as qm
from qotgd.core import GdConfig, solve

# lines collected by the acceptance module, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def exp1_desk():
    """First experiment pair on the coarse h = 0.01 grid."""
    P = qm.uniform_grid(0.0, 1.0, -0.1, 1.6, 0.01)
    Q = qm.uniform_grid(0.5, 1.5, -0.1, 1.6, 0.01)
    return P, Q, qm.cost_matrix(P, Q)


def two_point_instances():
    """Small hand-checkable pairs ``(name, P, Q, eps)``."""
    return [
        ("diracs", qm.dirac(0.0), qm.dirac(1.0), 0.1),
        ("symmetric", qm.make_discrete([-1.0, 1.0], [0.5, 0.5]),
         qm.make_discrete([-1.0, 1.0], [0.5, 0.5]), 0.5),
        ("skewed", qm.make_discrete([0.0, 1.0], [0.3, 0.7]),
         qm.make_discrete([0.2, 1.5], [0.6, 0.4]), 0.2),
    ]


def random_instance(rng, n=None, m=None, d=None):
    d = d or int(rng.integers(1, 3))
    n = n or int(rng.integers(2, 31))
    m = m or int(rng.integers(2, 31))
    P = qm.make_discrete(rng.uniform(0, 1, (n, d)), rng.uniform(0.1, 1.0, n))
    Q = qm.make_discrete(rng.uniform(0.3, 1.3, (m, d)), rng.uniform(0.1, 1.0, m))
    return P, Q, qm.cost_matrix(P, Q)


def converged(P, Q, C, eps, ratio=0.5, tol=1e-12, **kw):
    dual, trace = solve(P, Q, C, GdConfig(eps, ratio * eps, tol=tol, **kw))
    assert trace.status == "converged", trace.status
    return dual, trace


@pytest.fixture(scope="session")
def desk():
    return exp1_desk()


@pytest.fixture(scope="session")
def desk_star(desk):
    P, Q, C = desk
    return converged(P, Q, C, 0.1)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
