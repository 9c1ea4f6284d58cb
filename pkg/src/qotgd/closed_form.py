"""Explicit potentials in the full-support regime.

When ``eps + <p, q> - <q, x> - <p, y> + <x, y> >= 0`` on every support pair
(p, q the means of P, Q) the optimal coupling charges all of supp P x supp Q
and the potentials are quadratic polynomials; gradient ascent is unnecessary.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import DualPair, GdConfig, SolveTrace, project_balanced, solve
from .measures import DiscreteMeasure, cost_matrix, mean

CLOSED_FORM = "closed_form"


def full_support_check(P: DiscreteMeasure, Q: DiscreteMeasure, eps: float) -> tuple[bool, float]:
    """Return ``(holds, margin)`` with margin the minimum of the condition over all pairs."""
    if P.dim != Q.dim:
        raise ValueError("dimension mismatch")
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    p, q = mean(P), mean(Q)
    X, Y = P.points, Q.points
    expr = (eps + p @ q) - (X @ q)[:, None] - (Y @ p)[None, :] + X @ Y.T
    margin = float(expr.min())
    return margin >= 0, margin


def full_support_potentials(P: DiscreteMeasure, Q: DiscreteMeasure, eps: float,
                            balanced: bool = True) -> DualPair:
    ok, margin = full_support_check(P, Q, eps)
    if not ok:
        raise ValueError(f"full-support condition fails (margin {margin:.3g}); "
                         "the explicit potentials do not solve the problem")
    p, q = mean(P), mean(Q)
    X, Y = P.points, Q.points
    shift = (eps + p @ q) / 2
    f = 0.5 * np.sum(X * X, axis=1) - X @ q + shift
    g = 0.5 * np.sum(Y * Y, axis=1) - Y @ p + shift
    dual = DualPair(f, g)
    return project_balanced(dual, P, Q) if balanced else dual


def solve_potentials(P: DiscreteMeasure, Q: DiscreteMeasure, cfg: GdConfig,
                     cost: Optional[np.ndarray] = None,
                     record_iterates: bool = False) -> tuple[DualPair, Optional[SolveTrace], str]:
    """Front end: closed form when available, gradient ascent otherwise.

    Returns the potentials, the trace (``None`` on the closed-form path) and
    the status, which is ``closed_form`` or the gradient-ascent status.
    """
    ok, _ = full_support_check(P, Q, cfg.epsilon)
    if ok:
        return full_support_potentials(P, Q, cfg.epsilon), None, CLOSED_FORM
    if cost is None:
        cost = cost_matrix(P, Q)
    dual, trace = solve(P, Q, cost, cfg, record_iterates=record_iterates)
    return dual, trace, trace.status
