"""Finitely supported probability measures on R^d.

A :class:`DiscreteMeasure` is the currency of the whole package: marginals,
kernel rows, base measures of Bass models and interpolation snapshots are
all discrete measures. Instances are immutable; constructors normalise
weights, merge bit-identical atoms and sort atoms lexicographically (which
for ``dim == 1`` is ascending order).
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import ndtr, ndtri

from . import _core
from .lp import LPInfeasible, martingale_polytope, solve_lp

__all__ = [
    "MeasureError",
    "DiscreteMeasure",
    "PotentialFunction",
    "make_measure",
    "dirac",
    "mean",
    "second_moment",
    "potential",
    "eval_potential",
    "convex_order_1d",
    "convex_order_lp",
    "wasserstein1_1d",
    "wasserstein2_1d",
    "wasserstein2_lp",
    "quantile",
    "gaussian_quantization",
    "load_measure",
    "save_measure",
    "measure_to_dict",
    "measure_from_dict",
]

LP_SUPPORT_CAP = 400


class MeasureError(ValueError):
    """Invalid measure input or an operation applied to the wrong dimension."""


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure ``sum_i weights[i] * delta(atoms[i])``.

    Attributes
    ----------
    atoms : ndarray, shape (n, dim)
        Distinct support points, lexicographically sorted.
    weights : ndarray, shape (n,)
        Positive weights summing to one.
    """

    atoms: np.ndarray
    weights: np.ndarray

    @property
    def dim(self):
        return self.atoms.shape[1]

    @property
    def size(self):
        return self.atoms.shape[0]

    @property
    def x(self):
        """Atoms as a flat array (``dim == 1`` only)."""
        _require_1d(self)
        return self.atoms[:, 0]

    def shift(self, c):
        return make_measure(self.atoms + np.asarray(c, dtype=float), self.weights)

    def scale(self, s):
        return make_measure(self.atoms * float(s), self.weights)

    def __repr__(self):
        return f"DiscreteMeasure(dim={self.dim}, size={self.size})"


def make_measure(points, weights=None):
    """Build a normalised, deduplicated and sorted :class:`DiscreteMeasure`.

    Parameters
    ----------
    points : array_like
        Either a flat sequence of reals (a measure on the line) or an
        ``(n, d)`` array of points.
    weights : array_like, optional
        Nonnegative weights, uniform when omitted. Zero-weight atoms are
        dropped.

    Examples
    --------
    >>> m = make_measure([-1, 1, 1], [1, 1, 1])
    >>> m.x, m.weights
    (array([-1.,  1.]), array([0.33333333, 0.66666667]))
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise MeasureError("empty measure")
    if pts.ndim == 1:
        pts = pts[:, None]
    elif pts.ndim != 2:
        raise MeasureError("points must be a flat sequence or an (n, d) array")
    if weights is None:
        w = np.ones(pts.shape[0])
    else:
        w = np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != pts.shape[0]:
        raise MeasureError(f"{pts.shape[0]} points but {w.shape[0]} weights")
    if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
        raise MeasureError("non-finite point or weight")
    if np.any(w < 0):
        raise MeasureError("negative weight")
    total = w.sum()
    if total <= 0:
        raise MeasureError("weights sum to zero")
    keep = w > 0
    pts, w = pts[keep], w[keep]
    atoms, inverse = np.unique(pts, axis=0, return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights=w, minlength=atoms.shape[0])
    merged = merged / merged.sum()
    atoms = np.ascontiguousarray(atoms)
    atoms.setflags(write=False)
    merged.setflags(write=False)
    return DiscreteMeasure(atoms=atoms, weights=merged)


def dirac(point):
    """Unit mass at ``point`` (a real or a point in R^d)."""
    p = np.atleast_1d(np.asarray(point, dtype=float))
    return make_measure(p[None, :], [1.0])


def _require_1d(m):
    if m.dim != 1:
        raise MeasureError(f"operation needs a measure on the line, got dim={m.dim}")


def _require_same_dim(a, b):
    if a.dim != b.dim:
        raise MeasureError(f"dimension mismatch: {a.dim} vs {b.dim}")


def mean(m):
    """Barycentre; a float for ``dim == 1``, else an array."""
    c = m.weights @ m.atoms
    return float(c[0]) if m.dim == 1 else c


def second_moment(m):
    return float(m.weights @ np.sum(m.atoms ** 2, axis=1))


@dataclass(frozen=True, eq=False)
class PotentialFunction:
    """``u(x) = sum_i w_i |x - a_i|`` for a measure on the line."""

    base: DiscreteMeasure

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a = self.base.x
        w = self.base.weights
        # exact piecewise-linear evaluation through CDF and partial first moments
        cw = np.concatenate(([0.0], np.cumsum(w)))
        cm = np.concatenate(([0.0], np.cumsum(w * a)))
        k = np.searchsorted(a, x, side="right")
        left_mass, left_mom = cw[k], cm[k]
        val = x * (2 * left_mass - 1) - 2 * left_mom + cm[-1]
        return val if val.ndim else float(val)


def potential(m):
    _require_1d(m)
    return PotentialFunction(m)


def eval_potential(u, x):
    return u(x)


def convex_order_1d(mu, nu, tol=1e-9):
    """True when ``mu`` precedes ``nu`` in convex order, up to ``tol``.

    Both potentials are piecewise linear with kinks at the atoms, so
    comparing them at every atom of either measure is exact.
    """
    _require_1d(mu)
    _require_1d(nu)
    if abs(mean(mu) - mean(nu)) > tol:
        return False
    kinks = np.union1d(mu.x, nu.x)
    return bool(np.all(potential(mu)(kinks) <= potential(nu)(kinks) + tol))


def convex_order_lp(mu, nu):
    """True when a martingale coupling of ``mu`` and ``nu`` exists.

    Decided exactly (up to solver tolerances) by an LP feasibility
    problem. Solver failures other than infeasibility propagate as
    :class:`sbm.lp.LPError`.
    """
    _require_same_dim(mu, nu)
    poly = martingale_polytope(mu.atoms, mu.weights, nu.atoms, nu.weights)
    try:
        solve_lp(np.zeros(poly.n_vars), poly.A, poly.b)
    except LPInfeasible:
        return False
    return True


def wasserstein1_1d(a, b):
    _require_1d(a)
    _require_1d(b)
    return float(_core.wasserstein_1d(a.x, a.weights, b.x, b.weights, 1.0))


def wasserstein2_1d(a, b):
    _require_1d(a)
    _require_1d(b)
    return float(_core.wasserstein_1d(a.x, a.weights, b.x, b.weights, 2.0))


def wasserstein2_lp(a, b, cap=LP_SUPPORT_CAP):
    """W_2 in any dimension through the transportation LP."""
    _require_same_dim(a, b)
    if a.size > cap or b.size > cap:
        raise MeasureError(f"supports {a.size}x{b.size} exceed the LP cap {cap}x{cap}")
    n, m = a.size, b.size
    cost = np.sum((a.atoms[:, None, :] - b.atoms[None, :, :]) ** 2, axis=2).ravel()
    A = sparse.vstack([
        sparse.kron(sparse.eye(n), np.ones((1, m))),
        sparse.kron(np.ones((1, n)), sparse.eye(m)),
    ]).tocsr()
    res = solve_lp(cost, A, np.concatenate([a.weights, b.weights]))
    return float(np.sqrt(max(res.value, 0.0)))


def quantile(m, u):
    """Generalised inverse CDF ``inf{x : F(x) >= u}`` for ``0 < u < 1``."""
    _require_1d(m)
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr <= 0) | (u_arr >= 1)):
        raise MeasureError("quantile level must lie in (0, 1)")
    cdf = np.cumsum(m.weights)
    idx = np.minimum(np.searchsorted(cdf, u_arr, side="left"), m.size - 1)
    q = m.x[idx]
    return q if q.ndim else float(q)


def gaussian_quantization(n, sigma=1.0, center=0.0):
    """``n``-atom discretisation of N(center, sigma^2) by conditional means.

    The line is cut at the ``k/n`` quantiles and each cell is replaced by
    its conditional mean, so the result has the exact mean and precedes
    the Gaussian in convex order.
    """
    if n == 1:
        return dirac(center)
    edges = ndtri(np.linspace(0.0, 1.0, n + 1))
    dens = np.exp(-0.5 * edges ** 2) / np.sqrt(2 * np.pi)
    probs = np.diff(ndtr(edges))
    atoms = (dens[:-1] - dens[1:]) / probs
    atoms -= atoms @ probs
    return make_measure(center + sigma * atoms, probs)


# -- serialisation --------------------------------------------------------


def measure_to_dict(m):
    return {"dim": int(m.dim), "atoms": m.atoms.tolist(), "weights": m.weights.tolist()}


def measure_from_dict(d):
    try:
        dim = int(d["dim"])
        atoms = np.asarray(d["atoms"], dtype=float).reshape(-1, dim)
        return make_measure(atoms, d["weights"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MeasureError):
            raise
        raise MeasureError(f"malformed measure record: {exc}") from exc


def load_measure(path):
    """Read a measure from ``.json`` (``{"dim", "atoms", "weights"}``) or ``.csv``.

    CSV files need a header row; the last column holds the weights and the
    preceding columns the coordinates.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2 or len(rows[0]) < 2:
            raise MeasureError(f"{path}: need a header row and at least one data row")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise MeasureError(f"{path}: {exc}") from exc
        if data.shape[1] != len(rows[0]):
            raise MeasureError(f"{path}: ragged rows")
        return make_measure(data[:, :-1], data[:, -1])
    with path.open() as fh:
        try:
            return measure_from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise MeasureError(f"{path}: {exc}") from exc


def save_measure(m, path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(m.dim)] + ["weight"])
            for a, p in zip(m.atoms, m.weights):
                w.writerow([repr(float(v)) for v in a] + [repr(float(p))])
    else:
        path.write_text(json.dumps(measure_to_dict(m)))
