"""Naive entropic Sinkhorn iteration in potential form.

The exponentials are evaluated as written, without subtracting maxima or
working in the log domain. This is on purpose: the module exists to show
where plain Sinkhorn breaks down for small regularization, which a
stabilized variant would hide.
"""

from __future__ import annotations

import time
from typing import NamedTuple, Optional

import numpy as np

from .core import DualPair, SolveTrace, weighted_norm

CONVERGED = "converged"
MAX_ITERS = "max_iters"
FAILED = "numerically_failed"


class SinkhornResult(NamedTuple):
    dual: DualPair
    status: str
    iterations: int
    trace: SolveTrace


def sinkhorn_step(dual: DualPair, P, Q, cost: np.ndarray, eps: float) -> tuple[DualPair, bool]:
    """One g-update followed by one f-update.

    Returns the new pair and whether every entry is finite.
    """
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    with np.errstate(all="ignore"):
        K = np.exp((dual.f[:, None] - cost) / eps)
        g = -eps * np.log(P.weights @ K)
        K = np.exp((g[None, :] - cost) / eps)
        f = -eps * np.log(K @ Q.weights)
    new = DualPair(f, g)
    return new, new.is_finite()


def entropic_dual_value(dual: DualPair, P, Q, cost, eps: float) -> float:
    with np.errstate(all="ignore"):
        E = np.exp((np.add.outer(dual.f, dual.g) - cost) / eps)
        return float(P.weights @ dual.f + Q.weights @ dual.g - eps * (P.weights @ E @ Q.weights))


def entropic_marginal_residual(dual: DualPair, P, Q, cost, eps: float) -> tuple[float, float]:
    """Weighted L2 violation of both marginal constraints for the density ``exp((f+g-c)/eps)``."""
    with np.errstate(all="ignore"):
        E = np.exp((np.add.outer(dual.f, dual.g) - cost) / eps)
    r = E @ Q.weights - 1.0
    c = P.weights @ E - 1.0
    return float(np.sqrt(P.weights @ (r * r))), float(np.sqrt(Q.weights @ (c * c)))


def run_sinkhorn(P, Q, cost, eps: float, max_iters: int = 10_000, tol: float = 1e-10,
                 init: Optional[DualPair] = None) -> SinkhornResult:
    """Iterate until the sup-norm change of the potentials is at most ``tol``
    and both entropic marginal residuals are at most ``10 * tol``.

    Numeric failure (overflow, ``log(0)``) ends the run with status
    ``numerically_failed``; nothing is raised.
    """
    dual = init.copy() if init is not None else DualPair(np.zeros(len(P)), np.zeros(len(Q)))
    trace = SolveTrace()
    t0 = time.perf_counter()
    status = MAX_ITERS
    it = 0
    for it in range(1, max_iters + 1):
        new, ok = sinkhorn_step(dual, P, Q, cost, eps)
        if not ok:
            status = FAILED
            trace.delta.append(float("nan"))
            trace.supnorm_step.append(float("nan"))
            trace.gamma.append(float("nan"))
            trace.seconds.append(time.perf_counter() - t0)
            dual = new
            break
        diff = new - dual
        sup = float(max(np.max(np.abs(diff.f)), np.max(np.abs(diff.g))))
        trace.delta.append(weighted_norm(diff, P, Q))
        trace.supnorm_step.append(sup)
        trace.gamma.append(entropic_dual_value(new, P, Q, cost, eps))
        trace.seconds.append(time.perf_counter() - t0)
        dual = new
        # a small step alone leaves a marginal violation of order tol / eps
        if sup <= tol and max(entropic_marginal_residual(dual, P, Q, cost, eps)) <= 10 * tol:
            status = CONVERGED
            break
    trace.status = status
    return SinkhornResult(dual, status, it, trace)
