"""Smooth dual of the one-dimensional weak transport problem.

On an irreducible component with sorted atoms ``x`` (weights ``mu``) and
``y`` (weights ``nu``), write the kernel through its conditional CDFs
``c[x, j] = pi_x(y_1) + ... + pi_x(y_j)``. The objective becomes the
separable concave sum ``sum mu_x dy_j I(c[x, j])`` with
``I(c) = pdf(ppf(c))``, and all constraints are linear in ``c``. The dual
is a smooth convex function of ``n + m - 1`` variables,

    D(zeta, b) = sum_{x,j} mu_x dy_j J(b_x - zeta_j)
                 - sum_j dy_j N_j zeta_j + sum_x mu_x (y_m - x) b_x,

with ``J(s) = pdf(s) - s * cdf(-s)`` and ``N`` the cumulative weights of
``nu``. At the minimiser ``c[x, j] = cdf(zeta_j - b_x)``: the knots
``zeta`` and base points ``b`` are exactly a Bass pair. ``D`` is invariant
under a common shift of ``zeta`` and ``b``; we pin ``b[0]``.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, solve
from scipy.special import ndtr

from . import _core

_INV_SQRT_2PI = 0.3989422804014327
STALL_TOL = 1e-9


@dataclass(frozen=True)
class DualSolution:
    zeta: np.ndarray
    b: np.ndarray
    iterations: int
    residual: float
    converged: bool


def gauss_mass(lo, hi):
    """``cdf(hi) - cdf(lo)`` without cancellation in the upper tail."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    upper = lo > 0
    return np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def _J(s):
    a = np.abs(s)
    tail = np.exp(-0.5 * a * a) * _INV_SQRT_2PI - a * ndtr(-a)
    return np.where(s >= 0, tail, tail - s)


def knots_for(b, mu_w, nu_w):
    """Knots ``zeta`` with ``sum_x mu_x cdf(zeta_j - b_x) = N_j``."""
    targets = np.cumsum(nu_w)[:-1]
    return _core.smooth_step_inverse(targets, b, mu_w, 1.0, 0.0)


def kernel_rows(zeta, b):
    """Conditional law of ``y`` given ``b``: masses of the knot cells."""
    edges = np.concatenate(([-np.inf], zeta, [np.inf]))
    return gauss_mass(edges[None, :-1] - b[:, None], edges[None, 1:] - b[:, None])


def row_values(zeta, b, y):
    dy = np.diff(y)
    s = zeta[None, :] - b[:, None]
    return (np.exp(-0.5 * s * s) * _INV_SQRT_2PI) @ dy


def residuals(zeta, b, x, mu_w, y, nu_w):
    """Mean-constraint and marginal-constraint violations."""
    f0 = _core.smooth_step(b, zeta, np.diff(y), 1.0, y[0])
    marg = ndtr(zeta[None, :] - b[:, None]).T @ mu_w - np.cumsum(nu_w)[:-1]
    return f0 - x, marg


def _spd_solve(A, rhs):
    # near-singular systems go to least squares instead of a noisy Cholesky solve
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            return solve(A, rhs, assume_a="pos")
    except (LinAlgError, LinAlgWarning, ValueError):
        return np.linalg.lstsq(A, rhs, rcond=None)[0]


def solve_dual(x, mu_w, y, nu_w, b0=None, tol=1e-12, max_iter=200):
    """Minimise ``D`` by damped Newton; see the module docstring.

    Parameters
    ----------
    x, mu_w, y, nu_w : ndarray
        Sorted atoms and weights of an irreducible pair with ``len(y) >= 2``.
    b0 : ndarray, optional
        Starting base points; defaults to ``x`` itself.
    tol : float
        Stop once both constraint residuals fall below ``tol`` (the mean
        residual relative to the spread of ``y``).
    """
    n, m = x.size, y.size
    dy = np.diff(y)
    N = np.cumsum(nu_w)[:-1]
    span = y[-1] - y[0]
    b = np.array(x if b0 is None else b0, dtype=float)
    zeta = knots_for(b, mu_w, nu_w)
    lin = np.concatenate((-dy * N, mu_w * (y[-1] - x)))

    def objective(z, bb):
        s = bb[:, None] - z[None, :]
        return float(mu_w @ (_J(s) @ dy) + lin @ np.concatenate((z, bb)))

    def grad(z, bb):
        c = ndtr(z[None, :] - bb[:, None])
        return np.concatenate((dy * (c.T @ mu_w - N), mu_w * (y[-1] - x - c @ dy)))

    def newton_dir(z, bb, g):
        # Hessian [[diag(dz), -W.T], [-W, diag(db)]]: eliminate the larger diagonal block
        s = z[None, :] - bb[:, None]
        W = mu_w[:, None] * dy[None, :] * (np.exp(-0.5 * s * s) * _INV_SQRT_2PI)
        dz, db = W.sum(axis=0), W.sum(axis=1)
        gz, gb = g[:k], g[k:]
        W = W[1:]  # gauge: b[0] stays put
        db, gb = db[1:], gb[1:]
        d = np.zeros(k + n)
        if k >= n - 1 and dz.min() > 1e-14 * dz.max():
            S = np.diag(db) - (W / dz) @ W.T
            rhs = -gb - W @ (gz / dz)
            d_b = _spd_solve(S, rhs)
            d[:k] = (-gz + W.T @ d_b) / dz
            d[k + 1:] = d_b
        elif k < n - 1 and db.min() > 1e-14 * db.max():
            S = np.diag(dz) - (W.T / db) @ W
            rhs = -gz - W.T @ (gb / db)
            d_z = _spd_solve(S, rhs)
            d[:k] = d_z
            d[k + 1:] = (-gb + W @ d_z) / db
        else:
            H = np.block([[np.diag(dz), -W.T], [-W, np.diag(db)]])
            sol = _spd_solve(H, -np.concatenate((gz, gb)))
            d[:k], d[k + 1:] = sol[:k], sol[k:]
        return d

    def resid(z, bb):
        rx, rn = residuals(z, bb, x, mu_w, y, nu_w)
        return max(float(np.max(np.abs(rx))) / span, float(np.max(np.abs(rn))))

    k = m - 1
    it = 0
    r = resid(zeta, b)
    f = objective(zeta, b)
    stall = 0
    while r > tol and it < max_iter and stall < 3:
        it += 1
        g = grad(zeta, b)
        d = newton_dir(zeta, b, g)
        slope = float(g @ d)
        gnorm = float(np.linalg.norm(g))
        step = 1.0
        while True:
            z_new = zeta + step * d[:k]
            b_new = b + step * d[k:]
            f_new = objective(z_new, b_new)
            if f_new <= f + 1e-4 * step * slope:
                break
            # near the optimum D is flat to rounding; judge by the gradient instead
            if np.linalg.norm(grad(z_new, b_new)) < gnorm:
                break
            step *= 0.5
            if step < 1e-12:
                break
        zeta, b, f = z_new, b_new, f_new
        r_new = resid(zeta, b)
        # rounding floor: sums over many cells stop improving slightly above tol
        stall = stall + 1 if r_new <= STALL_TOL and r_new > 0.5 * r else 0
        r = r_new
    return DualSolution(zeta=zeta, b=b, iterations=it, residual=r, converged=r <= max(tol, STALL_TOL if stall else 0))
