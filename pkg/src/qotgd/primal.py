"""Primal coupling recovered from potentials: feasibility, sparsity, value."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import io as qio
from .core import DualPair
from .measures import DiscreteMeasure

# entries at or below this are reported as zero in sparse exports
REPORT_THRESHOLD = 1e-12


@dataclass(frozen=True)
class Coupling:
    """Density of the coupling with respect to P x Q, as a dense (n, m) array."""

    density: np.ndarray
    P: DiscreteMeasure
    Q: DiscreteMeasure

    @property
    def row_marginal(self) -> np.ndarray:
        return self.density @ self.Q.weights

    @property
    def col_marginal(self) -> np.ndarray:
        return self.P.weights @ self.density

    def masses(self) -> np.ndarray:
        """Mass of each pair, ``wP_i * wQ_j * density_ij``."""
        return self.P.weights[:, None] * self.density * self.Q.weights[None, :]


def coupling_density(dual: DualPair, P, Q, cost: np.ndarray, eps: float) -> Coupling:
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    A = np.add.outer(dual.f, dual.g) - cost
    np.maximum(A, 0.0, out=A)
    A /= eps
    return Coupling(A, P, Q)


def marginal_residual(coupling: Coupling) -> tuple[float, float]:
    r = coupling.row_marginal - 1.0
    c = coupling.col_marginal - 1.0
    return (float(np.sqrt(coupling.P.weights @ (r * r))),
            float(np.sqrt(coupling.Q.weights @ (c * c))))


def support_fraction(coupling: Coupling) -> float:
    mask = coupling.density > 0
    return float(coupling.P.weights @ mask @ coupling.Q.weights)


def primal_objective(coupling: Coupling, cost: np.ndarray, eps: float) -> float:
    d = coupling.density
    wP, wQ = coupling.P.weights, coupling.Q.weights
    transport = wP @ (d * cost) @ wQ
    penalty = wP @ (d * d) @ wQ
    return float(transport + 0.5 * eps * penalty)


def support_points(coupling: Coupling, threshold: float = REPORT_THRESHOLD):
    """Indices ``(i, j)`` of pairs with density above ``threshold``."""
    return np.nonzero(coupling.density > threshold)


def max_support_displacement(coupling: Coupling) -> float:
    """Largest ``|x_i - y_j|`` over pairs charged by the coupling."""
    i, j = np.nonzero(coupling.density > 0)
    if i.size == 0:
        return 0.0
    d = coupling.P.points[i] - coupling.Q.points[j]
    return float(np.max(np.linalg.norm(d, axis=1)))


def write_dense_csv(coupling: Coupling, path) -> None:
    """Row-major density matrix with a ``y0,y1,...`` header."""
    qio.write_table(path, [f"y{j}" for j in range(coupling.density.shape[1])],
                    ([float(v) for v in row] for row in coupling.density))


def write_sparse_csv(coupling: Coupling, path, threshold: float = REPORT_THRESHOLD) -> None:
    """Rows ``i,j,x_i,y_j,density``; coordinates of 2D points are joined with ``;``."""
    P, Q = coupling.P, coupling.Q
    rows = []
    for i, j in zip(*support_points(coupling, threshold)):
        rows.append([int(i), int(j),
                     ";".join(repr(float(v)) for v in P.points[i]),
                     ";".join(repr(float(v)) for v in Q.points[j]),
                     float(coupling.density[i, j])])
    qio.write_table(path, ["i", "j", "x_i", "y_j", "density"], rows)
