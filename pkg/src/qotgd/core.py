"""Dual objective, L2 gradient and gradient ascent for quadratically regularized OT.

All vectors live in L2(P) x L2(Q): inner products and norms are weighted by
the atom weights of the two marginals, and the gradient is the Riesz
representative in that weighted metric (no multiplication by the weights).
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .measures import DiscreteMeasure

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERS = "max_iters"
DIVERGED = "diverged"

# Delta_n above this multiple of max(Delta_1, 1) is treated as divergence
DIVERGENCE_FACTOR = 1e6


@dataclass
class DualPair:
    """Potential values ``f`` on supp P and ``g`` on supp Q."""

    f: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.f = np.array(self.f, dtype=float).ravel()
        self.g = np.array(self.g, dtype=float).ravel()

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.f, self.g])

    @classmethod
    def from_stacked(cls, v: np.ndarray, n: int) -> "DualPair":
        return cls(v[:n], v[n:])

    @classmethod
    def constant(cls, P: DiscreteMeasure, Q: DiscreteMeasure, value: float = 0.5) -> "DualPair":
        return cls(np.full(len(P), float(value)), np.full(len(Q), float(value)))

    def copy(self) -> "DualPair":
        return DualPair(self.f.copy(), self.g.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.g)))

    def imbalance(self, P: DiscreteMeasure, Q: DiscreteMeasure) -> float:
        """``E_Q[g] - E_P[f]``; zero on the balanced subspace."""
        return float(Q.weights @ self.g - P.weights @ self.f)

    def is_balanced(self, P, Q, tol: float = 1e-10) -> bool:
        return abs(self.imbalance(P, Q)) <= tol

    def __sub__(self, other: "DualPair") -> "DualPair":
        return DualPair(self.f - other.f, self.g - other.g)

    def __add__(self, other: "DualPair") -> "DualPair":
        return DualPair(self.f + other.f, self.g + other.g)


@dataclass
class GdConfig:
    epsilon: float
    eta: float
    max_iters: int = 100_000
    tol: float = 1e-10
    init: Union[float, DualPair] = 0.5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be a positive integer")
        self.max_iters = int(self.max_iters)
        if self.eta > self.epsilon:
            warnings.warn(f"step size {self.eta} exceeds epsilon {self.epsilon}; "
                          "linear convergence is not guaranteed", RuntimeWarning, stacklevel=3)

    @property
    def ratio(self) -> float:
        return self.eta / self.epsilon


@dataclass
class SolveTrace:
    """Per-iteration record of a gradient ascent run.

    Row ``k`` describes iterate ``n = k + 1``: ``delta[k]`` is the weighted L2
    distance between iterates ``n`` and ``n - 1`` and ``gamma[k]`` the dual
    objective at iterate ``n``.
    """

    delta: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    supnorm_step: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    status: str = MAX_ITERS
    gamma0: float = float("nan")
    iterates: Optional[list] = None

    def __len__(self) -> int:
        return len(self.delta)

    @property
    def n_iters(self) -> int:
        return len(self.delta)


def _check(dual: DualPair, P: DiscreteMeasure, Q: DiscreteMeasure) -> None:
    if dual.f.shape[0] != len(P) or dual.g.shape[0] != len(Q):
        raise ValueError("potentials do not match the supports of P and Q")


def weighted_norm(dual: DualPair, P: DiscreteMeasure, Q: DiscreteMeasure) -> float:
    return float(np.sqrt(P.weights @ (dual.f * dual.f) + Q.weights @ (dual.g * dual.g)))


def project_balanced(dual: DualPair, P: DiscreteMeasure, Q: DiscreteMeasure) -> DualPair:
    """Orthogonal projection onto ``{(f, g): E_P[f] = E_Q[g]}``."""
    _check(dual, P, Q)
    if not dual.is_finite():
        raise ValueError("non-finite potentials")
    s = dual.imbalance(P, Q)
    return DualPair(dual.f + s / 2, dual.g - s / 2)


def _positive_part(dual: DualPair, cost: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    A = np.add.outer(dual.f, dual.g, out=out)
    A -= cost
    np.maximum(A, 0.0, out=A)
    return A


def _evaluate(dual, P, Q, cost, eps, out=None, want_gamma=True):
    """Gradient components and (optionally) the dual value from one pass over the pairs."""
    A = _positive_part(dual, cost, out=out)
    row = A @ Q.weights
    col = P.weights @ A
    grad = DualPair(1.0 - row / eps, 1.0 - col / eps)
    gamma = None
    if want_gamma:
        np.square(A, out=A)
        quad = P.weights @ (A @ Q.weights)
        gamma = float(P.weights @ dual.f + Q.weights @ dual.g - quad / (2 * eps))
    return grad, gamma


def dual_objective(dual: DualPair, P, Q, cost: np.ndarray, eps: float) -> float:
    r"""Dual value ``E_P f + E_Q g - (1/2eps) E_{P x Q} (f + g - c)_+^2``."""
    _check(dual, P, Q)
    return _evaluate(dual, P, Q, cost, eps)[1]


def dual_gradient(dual: DualPair, P, Q, cost: np.ndarray, eps: float) -> DualPair:
    """Gradient of the dual objective in the weighted L2 metric.

    Returns
    -------
    DualPair
        ``1 - (1/eps) sum_j wQ_j (f_i + g_j - c_ij)_+`` on supp P and the
        symmetric expression on supp Q.
    """
    _check(dual, P, Q)
    return _evaluate(dual, P, Q, cost, eps, want_gamma=False)[0]


def gd_step(dual: DualPair, P, Q, cost, cfg: GdConfig) -> DualPair:
    grad = dual_gradient(dual, P, Q, cost, cfg.epsilon)
    new = DualPair(dual.f + cfg.eta * grad.f, dual.g + cfg.eta * grad.g)
    if not new.is_finite():
        return new
    return project_balanced(new, P, Q)


def delta_n(prev: DualPair, cur: DualPair, P, Q) -> float:
    _check(prev, P, Q)
    _check(cur, P, Q)
    return weighted_norm(cur - prev, P, Q)


def schrodinger_residual(dual: DualPair, P, Q, cost, eps: float) -> float:
    """Weighted L2 norm of the violation of the optimality system, i.e. ``eps * |DGamma|``."""
    grad = dual_gradient(dual, P, Q, cost, eps)
    return eps * weighted_norm(grad, P, Q)


def lipschitz_witness(dual_a: DualPair, dual_b: DualPair, P, Q, cost, eps: float) -> float:
    diff = weighted_norm(dual_a - dual_b, P, Q)
    if diff == 0:
        raise ValueError("the two points coincide")
    ga = dual_gradient(dual_a, P, Q, cost, eps)
    gb = dual_gradient(dual_b, P, Q, cost, eps)
    return weighted_norm(ga - gb, P, Q) / diff


def initial_pair(init, P, Q) -> DualPair:
    if isinstance(init, DualPair):
        _check(init, P, Q)
        dual = init.copy()
    else:
        dual = DualPair.constant(P, Q, float(init))
    return project_balanced(dual, P, Q)


def solve(P: DiscreteMeasure, Q: DiscreteMeasure, cost: np.ndarray, cfg: GdConfig,
          record_iterates: bool = False) -> tuple[DualPair, SolveTrace]:
    """Run projected gradient ascent until ``Delta_n <= tol``.

    Parameters
    ----------
    P, Q : DiscreteMeasure
    cost : ndarray, shape (len(P), len(Q))
    cfg : GdConfig
    record_iterates : bool
        Keep every iterate (including the start point) in ``trace.iterates``.

    Returns
    -------
    dual : DualPair
        Last iterate, balanced.
    trace : SolveTrace
        ``status`` is one of ``converged``, ``max_iters`` or ``diverged``;
        divergence is reported, never raised.
    """
    eps, eta = cfg.epsilon, cfg.eta
    x = initial_pair(cfg.init, P, Q)
    trace = SolveTrace(iterates=[x.copy()] if record_iterates else None)
    buf = np.empty((len(P), len(Q)))
    wP, wQ = P.weights, Q.weights
    t0 = time.perf_counter()
    first_delta = None

    grad, gamma = _evaluate(x, P, Q, cost, eps, out=buf)
    trace.gamma0 = gamma
    for _ in range(cfg.max_iters):
        # increment eta * proj(grad); projecting the sum x + eta * grad instead
        # also cancels any imbalance drift accumulated in x
        s = wQ @ grad.g - wP @ grad.f
        step_f = eta * (grad.f + s / 2)
        step_g = eta * (grad.g - s / 2)
        delta = float(np.sqrt(wP @ (step_f * step_f) + wQ @ (step_g * step_g)))
        sup = float(max(np.max(np.abs(step_f)), np.max(np.abs(step_g))))
        x = DualPair(x.f + eta * grad.f, x.g + eta * grad.g)
        finite = x.is_finite() and np.isfinite(delta)
        if finite:
            x = project_balanced(x, P, Q)
            grad, gamma = _evaluate(x, P, Q, cost, eps, out=buf)
        else:
            gamma = float("nan")
        trace.delta.append(delta)
        trace.supnorm_step.append(sup)
        trace.gamma.append(gamma)
        trace.seconds.append(time.perf_counter() - t0)
        if record_iterates:
            trace.iterates.append(x.copy())
        if first_delta is None:
            first_delta = delta
        if not finite or delta > DIVERGENCE_FACTOR * max(first_delta, 1.0):
            trace.status = DIVERGED
            break
        if delta <= cfg.tol:
            trace.status = CONVERGED
            break
    else:
        trace.status = MAX_ITERS
    logger.debug("solve eps=%g eta=%g: %s after %d iterations", eps, eta, trace.status, len(trace))
    return x, trace
