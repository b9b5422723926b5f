"""Maximal correlation of a discrete measure with the standard Gaussian.

``H(eta) = sup E[M . B]`` over couplings of ``M ~ eta`` and ``B ~ N(0, I)``.
On the line the optimal coupling is comonotone and ``H`` has a closed form;
in the plane the Gaussian is replaced by a discretisation and the coupling
found by a transportation LP. Both return a dual potential on the atoms of
``eta`` which is a supergradient of the concave map ``eta -> H(eta)``.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import sparse
from scipy.special import ndtri

from . import _core
from .lp import solve_lp
from .measures import MeasureError, make_measure

__all__ = ["GaussianDiscretization", "MaxCorrResult", "gaussian_disc", "maxcorr_1d", "maxcorr_disc", "LP_VAR_CAP"]

LP_VAR_CAP = 400_000


@dataclass(frozen=True, eq=False)
class GaussianDiscretization:
    dim: int
    nodes: np.ndarray
    weights: np.ndarray
    scheme: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.weights.size

    def as_measure(self):
        return make_measure(self.nodes, self.weights)

    def covariance(self):
        c = self.nodes - self.weights @ self.nodes
        return (c * self.weights[:, None]).T @ c


@dataclass(frozen=True, eq=False)
class MaxCorrResult:
    """Value of ``H`` and dual potential values in the atom order of ``eta``."""

    value: float
    dual_potential: np.ndarray


def _rule_1d(order, kind):
    if kind == "gauss-hermite":
        z, w = hermegauss(order)
        return z, w / w.sum()
    if kind == "quantile-grid":
        z = ndtri((np.arange(order) + 0.5) / order)
        z = 0.5 * (z - z[::-1])  # exact antisymmetry
        return z / np.sqrt(np.mean(z ** 2)), np.full(order, 1.0 / order)
    raise MeasureError(f"unknown discretisation kind {kind!r}")


def gaussian_disc(dim, order, kind="gauss-hermite", seed=None):
    """Discretise the standard Gaussian on R^dim (dim 1 or 2).

    ``gauss-hermite`` and ``quantile-grid`` build a tensor grid of ``order``
    points per axis; the quantile grid is rescaled to unit variance.
    ``monte-carlo`` draws ``order`` samples and whitens them so that the
    empirical mean and covariance are exactly 0 and the identity.

    Examples
    --------
    >>> g = gaussian_disc(1, 2)
    >>> g.nodes.ravel(), g.weights
    (array([-1.,  1.]), array([0.5, 0.5]))
    """
    if dim not in (1, 2):
        raise MeasureError(f"Gaussian discretisation supports dim 1 or 2, got {dim}")
    if order < 2:
        raise MeasureError("order must be at least 2")
    scheme = {"kind": kind, "order": int(order)}
    if kind == "monte-carlo":
        if order <= dim:
            raise MeasureError("monte-carlo needs more samples than dimensions")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((order, dim))
        z -= z.mean(axis=0)
        L = np.linalg.cholesky(z.T @ z / order)
        z = np.linalg.solve(L, z.T).T
        scheme["seed"] = seed
        return GaussianDiscretization(dim, z, np.full(order, 1.0 / order), scheme)
    z, w = _rule_1d(order, kind)
    if dim == 1:
        return GaussianDiscretization(1, z[:, None], w, scheme)
    zz = np.stack(np.meshgrid(z, z, indexing="ij"), axis=-1).reshape(-1, 2)
    return GaussianDiscretization(2, zz, np.outer(w, w).ravel(), scheme)


def maxcorr_1d(eta):
    """Closed-form ``H`` on the line by comonotone slicing of the Gaussian.

    The dual potential satisfies ``phi(y_1) = 0`` and
    ``phi(y_{i+1}) - phi(y_i) = (y_{i+1} - y_i) ppf(c_i)`` with ``c_i`` the
    cumulative weights.

    Examples
    --------
    >>> round(maxcorr_1d(make_measure([-1, 1])).value, 10)
    0.7978845608
    """
    if eta.dim != 1:
        raise MeasureError(f"maxcorr_1d needs dim 1, got {eta.dim}")
    values, pot = _core.maxcorr_rows(eta.weights[None, :], eta.x)
    return MaxCorrResult(float(values[0]), pot[0])


def maxcorr_disc(eta, g, cap=LP_VAR_CAP):
    """``H`` against a Gaussian discretisation via the transportation LP.

    The dual potential is the vector of optimal duals of the ``eta``-side
    marginal constraints, shifted so that it vanishes at the first atom.
    """
    if eta.dim != g.dim:
        raise MeasureError(f"dimension mismatch: {eta.dim} vs {g.dim}")
    n, k = eta.size, g.size
    if n * k > cap:
        raise MeasureError(f"transport LP with {n}x{k} variables exceeds the cap {cap}")
    if n == 1:
        return MaxCorrResult(float(eta.atoms[0] @ (g.weights @ g.nodes)), np.zeros(1))
    gain = (eta.atoms @ g.nodes.T).ravel()
    A = sparse.vstack([
        sparse.kron(sparse.eye(n), np.ones((1, k))),
        sparse.kron(np.ones((1, n)), sparse.eye(k)),
    ]).tocsr()
    res = solve_lp(gain, A, np.concatenate([eta.weights, g.weights]), maximize=True, presolve=False)
    phi = res.eq_duals[:n]
    return MaxCorrResult(float(res.value), phi - phi[0])
