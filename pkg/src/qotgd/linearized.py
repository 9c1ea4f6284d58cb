"""Matrices of the linearized gradient-ascent map and their spectra.

Operators act on stacked coordinates ``(f_1..f_n, g_1..g_m)``. They are
self-adjoint for the weighted inner product, so spectra are computed after
conjugating by ``D^{1/2}`` (``D`` the diagonal of atom weights) and deflating
the direction ``D^{1/2}(1, -1)``, the orthogonal complement of the balanced
subspace.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import DualPair, schrodinger_residual
from .measures import DiscreteMeasure

TIE_TOL = 1e-14
ASYMMETRY_LIMIT = 1e-8
DENSE_LIMIT = 4000


@dataclass(frozen=True)
class ActiveSets:
    """Sections of ``{f + g - c >= 0}``.

    ``S[i, j]`` says whether ``y_j`` belongs to the section at ``x_i``; the
    transpose gives the sections at the ``y_j``.
    """

    S: np.ndarray
    row_mass: np.ndarray
    col_mass: np.ndarray
    tie_count: int

    @property
    def T(self) -> np.ndarray:
        return self.S.T


@dataclass
class OperatorMatrix:
    matrix: np.ndarray
    weights: np.ndarray
    n: int
    kind: str = "L"

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, dual: DualPair) -> DualPair:
        return DualPair.from_stacked(self.matrix @ dual.stacked(), self.n)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        if self.matrix.shape != other.matrix.shape:
            raise ValueError("operator shapes differ")
        return OperatorMatrix(self.matrix - other.matrix, self.weights, self.n,
                              f"{self.kind}-{other.kind}")


def _slack(dual: DualPair, cost: np.ndarray) -> np.ndarray:
    return np.add.outer(dual.f, dual.g) - cost


def active_sets(dual: DualPair, cost: np.ndarray, P: DiscreteMeasure, Q: DiscreteMeasure) -> ActiveSets:
    xi = _slack(dual, cost)
    S = xi >= 0
    Sf = S.astype(float)
    return ActiveSets(S, Sf @ Q.weights, P.weights @ Sf,
                      int(np.count_nonzero(np.abs(xi) <= TIE_TOL)))


def support_components(sets: ActiveSets) -> int:
    """Connected components of the bipartite graph joining x_i and y_j when ``S[i, j]``.

    Potentials on different components can be shifted independently without
    changing optimality, so every component beyond the first adds an
    eigenvalue 1 to the linearization on the balanced subspace.
    """
    n, m = sets.S.shape
    adj = np.zeros((n + m, n + m), dtype=bool)
    adj[:n, n:] = sets.S
    return int(connected_components(csr_matrix(adj), directed=False)[0])


def lambda_measure(a, b):
    """Length of ``{lam in [0, 1]: lam * b + (1 - lam) * a >= 0}``.

    Works elementwise on arrays; returns a float for scalar input.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    out = np.zeros(a.shape)
    both = (a >= 0) & (b >= 0)
    out[both] = 1.0
    down = (a >= 0) & (b < 0)
    out[down] = a[down] / (a[down] - b[down])
    up = (a < 0) & (b >= 0)
    out[up] = b[up] / (b[up] - a[up])
    return float(out) if out.ndim == 0 else out


def _projection_left(M: np.ndarray, P, Q) -> np.ndarray:
    # proj(v) = v + (c.v / 2) u with c = (-wP, wQ), u = (1, -1)
    n = len(P)
    c = np.concatenate([-P.weights, Q.weights])
    s = c @ M
    out = M.copy()
    out[:n] += s / 2
    out[n:] -= s / 2
    return out


def _assemble(mu: np.ndarray, P, Q, ratio: float, kind: str, project: bool = True) -> OperatorMatrix:
    n, m = mu.shape
    wP, wQ = P.weights, Q.weights
    M = np.zeros((n + m, n + m))
    idx_f = np.arange(n)
    idx_g = n + np.arange(m)
    M[idx_f, idx_f] = 1.0 - ratio * (mu @ wQ)
    M[idx_g, idx_g] = 1.0 - ratio * (wP @ mu)
    M[:n, n:] = -ratio * mu * wQ[None, :]
    M[n:, :n] = -ratio * mu.T * wP[None, :]
    if project:
        M = _projection_left(M, P, Q)
    return OperatorMatrix(M, np.concatenate([wP, wQ]), n, kind)


def assemble_M(dual_star: DualPair, P, Q, cost, eps: float = 1.0) -> OperatorMatrix:
    """The unprojected operator ``(f, g) -> (f Q(S_x) + int_S g dQ, g P(T_y) + int_T f dP)``.

    ``assemble_L`` equals ``proj (I - (eta/eps) M)``.
    """
    sets = active_sets(dual_star, cost, P, Q)
    # reuse the assembly with ratio -1 and subtract the identity
    op = _assemble(sets.S.astype(float), P, Q, -1.0, "M", project=False)
    op.matrix -= np.eye(op.dim)
    return op


def assemble_L(dual_star: DualPair, P, Q, cost, eps: float, eta: float,
               check_tol: Optional[float] = 1e-8, project: bool = True) -> OperatorMatrix:
    """Linearization of ``(f, g) -> proj((f, g) + eta * DGamma(f, g))`` at the optimum."""
    if check_tol is not None:
        res = schrodinger_residual(dual_star, P, Q, cost, eps)
        if res > check_tol:
            warnings.warn(f"base point is not converged (residual {res:.2e})", RuntimeWarning,
                          stacklevel=2)
    sets = active_sets(dual_star, cost, P, Q)
    return _assemble(sets.S.astype(float), P, Q, eta / eps, "L", project)


def assemble_Ln(dual_n: DualPair, dual_star: DualPair, P, Q, cost, eps: float, eta: float) -> OperatorMatrix:
    """Exact transfer operator mapping ``x_n - x*`` to ``x_{n+1} - x*``.

    The indicator of the active set is replaced by the measure of the
    interpolation parameters for which the segment between the two slacks is
    nonnegative; the slack is affine in the parameter, so this is closed form.
    """
    mu = lambda_measure(_slack(dual_n, cost), _slack(dual_star, cost))
    return _assemble(mu, P, Q, eta / eps, "Ln")


def _deflation_basis_apply(op: OperatorMatrix):
    """Return the D-conjugated matrix and the Householder vector sending e to the first axis."""
    sq = np.sqrt(op.weights)
    A = (sq[:, None] * op.matrix) / sq[None, :]
    e = np.concatenate([sq[:op.n], -sq[op.n:]])
    e /= np.linalg.norm(e)
    v = e.copy()
    # reflect e onto -sign(e_0) * axis_0 to avoid cancellation
    v[0] += np.copysign(1.0, e[0])
    v /= np.linalg.norm(v)
    return A, e, v


def _deflated(op: OperatorMatrix) -> np.ndarray:
    A, e, _ = _deflation_basis_apply(op)
    Pe = np.eye(op.dim) - np.outer(e, e)
    return Pe @ A @ Pe


def self_adjoint_defect(op: OperatorMatrix) -> float:
    X = _deflated(op)
    return float(np.max(np.abs(X - X.T)))


def _restricted(op: OperatorMatrix) -> np.ndarray:
    """Matrix of the operator in an orthonormal basis of the balanced subspace."""
    A, _, v = _deflation_basis_apply(op)
    # H A H with H = I - 2 v v^T
    HA = A - 2.0 * np.outer(v, v @ A)
    HAH = HA - 2.0 * np.outer(HA @ v, v)
    return HAH[1:, 1:]


def _power_extremes(apply, dim: int, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0):
    rng = np.random.default_rng(seed)

    def dominant(mat_vec):
        x = rng.standard_normal(dim)
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(max_iter):
            y = mat_vec(x)
            lam_new = float(x @ y)
            ny = np.linalg.norm(y)
            if ny == 0:
                return 0.0
            x = y / ny
            if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
                lam = lam_new
                break
            lam = lam_new
        else:
            warnings.warn("power iteration did not converge", RuntimeWarning, stacklevel=3)
        return lam

    lam1 = dominant(apply)
    lam2 = dominant(lambda x: apply(x) - lam1 * x) + lam1
    return min(lam1, lam2), max(lam1, lam2)


def operator_norm(op: OperatorMatrix, method: str = "auto") -> tuple[float, float, float]:
    """Operator norm on the balanced subspace and the extreme eigenvalues there.

    Returns
    -------
    norm, alpha_minus, alpha_plus : float
    """
    X = _restricted(op)
    if X.size == 0:
        return 0.0, 0.0, 0.0
    asym = float(np.max(np.abs(X - X.T)))
    if asym > ASYMMETRY_LIMIT:
        raise ValueError(f"operator is not self-adjoint (defect {asym:.2e}); "
                         "base point not converged or matrix corrupted")
    X = 0.5 * (X + X.T)
    if method == "auto":
        method = "dense" if op.dim <= DENSE_LIMIT else "power"
    if method == "dense":
        ev = np.linalg.eigvalsh(X)
        lo, hi = float(ev[0]), float(ev[-1])
    elif method == "power":
        lo, hi = _power_extremes(lambda x: X @ x, X.shape[0])
    else:
        raise ValueError(f"unknown method {method!r}")
    return max(abs(lo), abs(hi)), lo, hi
