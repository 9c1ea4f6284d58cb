"""Finite marginal measures, quadrature discretizations and cost matrices."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

WEIGHT_TOL = 1e-12
# grid nodes are snapped to this many decimals so that e.g. -0.1 + 100 * 0.001
# lands exactly on 0.0 and support indicators behave
_SNAP_DECIMALS = 12


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability measure with finitely many atoms.

    Attributes
    ----------
    points : ndarray, shape (n, d)
        Distinct support points, read-only.
    weights : ndarray, shape (n,)
        Positive weights summing to one, read-only.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=float).ravel()
        if pts.ndim != 2 or pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights must describe the same atoms")
        if w.size == 0:
            raise ValueError("empty measure")
        if not np.all(w > 0):
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.weights.shape[0]


def _normalize(w: np.ndarray) -> np.ndarray:
    w = w / w.sum()
    # one correction pass pulls the sum within a couple of ulps of 1
    return w / w.sum()


def make_discrete(points, weights) -> DiscreteMeasure:
    """Build a measure from raw atoms.

    Weights are renormalized to sum to one, zero-weight atoms are dropped and
    repeated points are merged (weights summed) keeping first-occurrence order.
    """
    w = np.asarray(weights, dtype=float).ravel()
    if len(points) == 0 or w.size == 0:
        raise ValueError("empty input")
    rows = []
    for p in points:
        row = np.atleast_1d(np.asarray(p, dtype=float)).ravel()
        rows.append(row)
    dims = {r.shape[0] for r in rows}
    if len(dims) != 1:
        raise ValueError(f"points have inconsistent dimensions {sorted(dims)}")
    if len(rows) != w.size:
        raise ValueError("points and weights differ in length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if not w.sum() > 0:
        raise ValueError("weights sum to zero")

    index: dict[tuple, int] = {}
    merged_pts: list[np.ndarray] = []
    merged_w: list[float] = []
    for r, wi in zip(rows, w):
        if wi == 0:
            continue
        key = tuple(r.tolist())
        if key in index:
            merged_w[index[key]] += wi
        else:
            index[key] = len(merged_pts)
            merged_pts.append(r)
            merged_w.append(wi)
    return DiscreteMeasure(np.vstack(merged_pts), _normalize(np.array(merged_w)))


def dirac(x) -> DiscreteMeasure:
    return make_discrete([x], [1.0])


def _mesh(a: float, b: float, h: float) -> np.ndarray:
    if not a < b:
        raise ValueError("need a < b")
    if not 0 < h <= b - a:
        raise ValueError("need 0 < h <= b - a")
    n = int(round((b - a) / h))
    if abs(a + n * h - b) > 1e-9 * max(1.0, abs(b)):
        raise ValueError(f"step {h} does not divide [{a}, {b}]")
    nodes = np.round(a + h * np.arange(n + 1), _SNAP_DECIMALS)
    nodes[-1] = b
    return nodes


def _trapezoid_coefficients(k: int, h: float) -> np.ndarray:
    c = np.full(k, h)
    c[0] = c[-1] = h / 2
    return c


def _eval_density(density, x: float, h: float, support) -> tuple[float, float]:
    """Return (node position, density value), shifting singular endpoint nodes inward."""
    val = float(density(x))
    if math.isfinite(val):
        return x, val
    if support is not None:
        lo, hi = support
        if abs(x - lo) <= 1e-12:
            x = x + h / 2
        elif abs(x - hi) <= 1e-12:
            x = x - h / 2
        else:
            raise ValueError(f"density is not finite at interior node {x}")
        val = float(density(x))
        if math.isfinite(val):
            return x, val
    raise ValueError(f"density is not finite at node {x}")


def trapezoid_grid(a: float, b: float, h: float,
                   density: Callable[[float], float],
                   support: Optional[tuple[float, float]] = None) -> DiscreteMeasure:
    """Discretize a density on [a, b] with the regular trapezoid rule.

    Parameters
    ----------
    a, b : float
        Mesh end points.
    h : float
        Mesh step; must divide ``b - a``.
    density : callable
        Nonnegative density, evaluated at every node.
    support : (lo, hi), optional
        Support of the density. A node sitting on a support end point where the
        density blows up is moved ``h / 2`` towards the interior.

    Returns
    -------
    DiscreteMeasure
        One atom per node with nonzero weight.
    """
    nodes = _mesh(a, b, h)
    if nodes.size < 2:
        raise ValueError("fewer than 2 nodes")
    coef = _trapezoid_coefficients(nodes.size, h)
    pts = np.empty_like(nodes)
    raw = np.empty_like(nodes)
    for k, x in enumerate(nodes):
        pts[k], dens = _eval_density(density, x, h, support)
        if dens < 0:
            raise ValueError(f"negative density at node {x}")
        raw[k] = coef[k] * dens
    keep = raw > 0
    if not np.any(keep):
        raise ValueError("density vanishes on every node")
    return DiscreteMeasure(pts[keep][:, None], _normalize(raw[keep]))


def product_grid_2d(ax: float, bx: float, ay: float, by: float, h: float,
                    density: Callable[[float, float], float]) -> DiscreteMeasure:
    """Tensor-product trapezoid discretization of a density on a rectangle."""
    xs = _mesh(ax, bx, h)
    ys = _mesh(ay, by, h)
    cx = _trapezoid_coefficients(xs.size, h)
    cy = _trapezoid_coefficients(ys.size, h)
    pts = []
    raw = []
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            dens = float(density(x, y))
            if not math.isfinite(dens) or dens < 0:
                raise ValueError(f"invalid density value {dens} at ({x}, {y})")
            if dens > 0:
                pts.append((x, y))
                raw.append(cx[i] * cy[j] * dens)
    if not raw:
        raise ValueError("density vanishes on every node")
    return DiscreteMeasure(np.array(pts), _normalize(np.array(raw)))


def mean(measure: DiscreteMeasure) -> np.ndarray:
    return measure.weights @ measure.points


def cost_matrix(P: DiscreteMeasure, Q: DiscreteMeasure) -> np.ndarray:
    """Squared-distance cost ``0.5 * |x_i - y_j|^2`` as a read-only (n, m) array."""
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    # explicit differences rather than the |x|^2 + |y|^2 - 2<x,y> expansion,
    # which loses the exact zeros on coinciding points
    C = np.zeros((len(P), len(Q)))
    for k in range(P.dim):
        diff = P.points[:, k][:, None] - Q.points[:, k][None, :]
        C += diff * diff
    C *= 0.5
    C.setflags(write=False)
    return C


# ---------------------------------------------------------------------------
# Built-in densities
# ---------------------------------------------------------------------------

def uniform_density(lo: float, hi: float) -> Callable[[float], float]:
    height = 1.0 / (hi - lo)

    def pdf(x):
        return height if lo <= x <= hi else 0.0
    return pdf


def uniform_density_2d(ax, bx, ay, by) -> Callable[[float, float], float]:
    height = 1.0 / ((bx - ax) * (by - ay))

    def pdf(x, y):
        return height if (ax <= x <= bx and ay <= y <= by) else 0.0
    return pdf


def beta_density(alpha: float, beta: float) -> Callable[[float], float]:
    dist = stats.beta(alpha, beta)

    def pdf(x):
        if x < 0 or x > 1:
            return 0.0
        return float(dist.pdf(x))
    return pdf


def truncated_normal_density(mu: float, sigma: float, lo: float, hi: float) -> Callable[[float], float]:
    mass = stats.norm.cdf(hi, mu, sigma) - stats.norm.cdf(lo, mu, sigma)

    def pdf(x):
        if x < lo or x > hi:
            return 0.0
        return float(stats.norm.pdf(x, mu, sigma) / mass)
    return pdf


def uniform_grid(lo: float, hi: float, a: float, b: float, h: float) -> DiscreteMeasure:
    return trapezoid_grid(a, b, h, uniform_density(lo, hi), support=(lo, hi))


def beta_grid(alpha: float, beta: float, a: float, b: float, h: float) -> DiscreteMeasure:
    return trapezoid_grid(a, b, h, beta_density(alpha, beta), support=(0.0, 1.0))


def truncated_normal_grid(mu, sigma, lo, hi, a, b, h) -> DiscreteMeasure:
    return trapezoid_grid(a, b, h, truncated_normal_density(mu, sigma, lo, hi), support=(lo, hi))


def uniform_square_grid(ax, bx, ay, by, mesh: Sequence[float], h: float) -> DiscreteMeasure:
    mx0, mx1, my0, my1 = mesh
    return product_grid_2d(mx0, mx1, my0, my1, h, uniform_density_2d(ax, bx, ay, by))


# ---------------------------------------------------------------------------
# CSV files
# ---------------------------------------------------------------------------

def load_csv(path) -> DiscreteMeasure:
    """Read a measure from a CSV with header ``x1,...,xd,weight``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1].strip() != "weight":
            raise ValueError(f"{path}: expected header 'x1,...,xd,weight'")
        pts, w = [], []
        for row in reader:
            if not row:
                continue
            vals = [float(v) for v in row]
            pts.append(vals[:-1])
            w.append(vals[-1])
    return make_discrete(pts, w)


def save_csv(measure: DiscreteMeasure, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{k + 1}" for k in range(measure.dim)] + ["weight"])
        for p, w in zip(measure.points, measure.weights):
            writer.writerow([repr(float(v)) for v in p] + [repr(float(w))])
