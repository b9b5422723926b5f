"""Bass-type constructions of stretched Brownian motion.

A model is a base measure ``alpha`` and a nondecreasing map ``f`` with
``f(alpha * gamma) = nu``. The martingale is ``M_t = f_t(B_t)`` where
``B_0 ~ alpha`` and ``f_t(b) = E f(b + sqrt(1 - t) Z)``. On the line ``f``
is a right-continuous step function whose knots are fixed by ``alpha`` and
the cumulative weights of ``nu``; the base measure is found by iterating
``alpha <- f_0^{-1}(mu)``.

In the plane models are evaluation-only: ``f`` is the gradient of a convex
piecewise-linear function (a power-diagram map) recovered from a solved
kernel.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr

from . import _core
from ._dual import kernel_rows, knots_for, solve_dual
from .kernel import KernelError, MartingaleKernel, project_kernel
from .measures import (
    MeasureError,
    dirac,
    make_measure,
    mean,
    measure_from_dict,
    measure_to_dict,
)

__all__ = [
    "MonotoneMap",
    "BassModel",
    "BassOptions",
    "PowerMap",
    "PlanarModel",
    "bass_from_dirac",
    "bass_fixed_point",
    "bass_from_dual",
    "eval_f_t",
    "kernel_from_bass",
    "planar_model_from_solution",
]

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 0.3989422804014327


def _gh(order):
    z, w = hermegauss(order)
    return z, w / w.sum()


@dataclass(frozen=True, eq=False)
class MonotoneMap:
    """Nondecreasing map on the line given by a breakpoint table.

    ``rule="step"``: ``f(b) = values[0] + sum_{i: b >= knots[i]} (values[i+1] - values[i])``,
    right-continuous with ``len(values) == len(knots) + 1``.
    ``rule="linear"``: piecewise-linear interpolation through
    ``(knots[i], values[i])``, extended linearly beyond the end segments.
    """

    knots: np.ndarray
    values: np.ndarray
    rule: str = "step"

    def __post_init__(self):
        k, v = np.asarray(self.knots, float), np.asarray(self.values, float)
        if self.rule == "step":
            if v.size != k.size + 1:
                raise MeasureError("a step map needs one more value than knots")
        elif self.rule == "linear":
            if v.size != k.size or k.size < 2:
                raise MeasureError("a linear map needs at least two matching breakpoints")
        else:
            raise MeasureError(f"unknown interpolation rule {self.rule!r}")
        if np.any(np.diff(k) < 0) or np.any(np.diff(v) < 0):
            raise MeasureError("breakpoints and values must be nondecreasing")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    @classmethod
    def identity(cls):
        return cls(np.array([0.0, 1.0]), np.array([0.0, 1.0]), "linear")

    @property
    def jumps(self):
        return np.diff(self.values)

    def _slopes(self):
        s = np.diff(self.values) / np.diff(self.knots)
        return np.concatenate(([s[0]], s, [s[-1]]))

    def __call__(self, b):
        b = np.asarray(b, dtype=float)
        if self.rule == "step":
            out = np.asarray(_core.smooth_step(b, self.knots, self.jumps, 0.0, self.values[0])).reshape(b.shape)
        else:
            s = self._slopes()
            out = self.values[0] + s[0] * (b - self.knots[0])
            out = out + np.sum(np.diff(s)[None, :] * np.maximum(b.reshape(-1, 1) - self.knots[None, :], 0.0), axis=1).reshape(b.shape)
        return out if out.ndim else float(out)

    def smoothed(self, b, scale):
        """``E f(b + scale Z)`` in closed form; ``scale = 0`` gives ``f``."""
        if scale <= 0:
            return self(b)
        b = np.asarray(b, dtype=float)
        if self.rule == "step":
            out = np.asarray(_core.smooth_step(b, self.knots, self.jumps, scale, self.values[0])).reshape(b.shape)
        else:
            s = self._slopes()
            u = (b.reshape(-1, 1) - self.knots[None, :]) / scale
            hinge = scale * (u * ndtr(u) + np.exp(-0.5 * u * u) * _INV_SQRT_2PI)
            out = self.values[0] + s[0] * (b - self.knots[0]) + (hinge @ np.diff(s)).reshape(b.shape)
        return out if out.ndim else float(out)

    def smoothed_inverse(self, x, scale):
        """Solve ``E f(b + scale Z) = x`` for ``b`` (``scale > 0``, step rule)."""
        if self.rule != "step":
            raise MeasureError("inverse is implemented for step maps")
        return _core.smooth_step_inverse(np.asarray(x, dtype=float), self.knots, self.jumps, scale, self.values[0])

    def to_dict(self):
        return {"rule": self.rule, "knots": self.knots.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["knots"], float), np.asarray(d["values"], float), d.get("rule", "step"))


@dataclass(frozen=True)
class BassOptions:
    """Fixed-point settings.

    ``tol`` is relative to the standard deviation of ``nu``. ``damping`` is
    the initial relaxation weight of the new base points; with
    ``auto_damping`` it drops to 0.5 after three consecutive residual
    increases.
    """

    tol: float = 1e-5
    max_iter: int = 2000
    damping: float = 1.0
    auto_damping: bool = True


@dataclass(frozen=True, eq=False)
class BassModel:
    """Fitted pair ``(alpha, f)`` for one irreducible component on the line.

    ``base_points[i]`` is the starting point of the Brownian driver for
    the ``i``-th atom of ``mu``; ``alpha`` is the law of those points.
    """

    mu: object
    nu_target: object
    base_points: np.ndarray
    f: MonotoneMap
    residual: float
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def alpha(self):
        return make_measure(self.base_points, self.mu.weights)

    def f_t(self, t, b, method="exact", order=64):
        return eval_f_t(self, t, b, method=method, order=order)

    def f0_inverse(self, x):
        return self.f.smoothed_inverse(x, 1.0)

    def value(self):
        """``E[M_1 (B_1 - B_0)] = sum_i mu_i E[f(b_i + Z) Z]`` in closed form."""
        s = self.f.knots[None, :] - self.base_points[:, None]
        return float(self.mu.weights @ ((np.exp(-0.5 * s * s) * _INV_SQRT_2PI) @ self.f.jumps))

    def to_dict(self):
        return {
            "mu": measure_to_dict(self.mu),
            "nu": measure_to_dict(self.nu_target),
            "alpha": measure_to_dict(self.alpha),
            "base_points": self.base_points.tolist(),
            "f": self.f.to_dict(),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mu=measure_from_dict(d["mu"]),
            nu_target=measure_from_dict(d["nu"]),
            base_points=np.asarray(d["base_points"], float),
            f=MonotoneMap.from_dict(d["f"]),
            residual=float(d["residual"]),
            iterations=int(d.get("iterations", 0)),
            converged=bool(d.get("converged", True)),
            meta=dict(d.get("meta", {})),
        )


def _step_map(zeta, nu):
    return MonotoneMap(np.asarray(zeta, float), nu.x.copy(), "step")


def bass_from_dirac(nu, m=None):
    """Bass martingale started at ``m``: ``alpha = delta_0`` and ``f = F_nu^{-1} o Phi``.

    Raises
    ------
    MeasureError
        If ``m`` differs from the mean of ``nu`` by more than 1e-9.
    """
    if nu.dim != 1:
        raise MeasureError("Bass models on the line need dim 1")
    mbar = mean(nu)
    m = mbar if m is None else float(m)
    if abs(m - mbar) > 1e-9:
        raise MeasureError(f"start {m} differs from the mean {mbar} of nu")
    zeta = knots_for(np.zeros(1), np.ones(1), nu.weights)
    return BassModel(dirac(m), nu, np.zeros(1), _step_map(zeta, nu), residual=0.0, meta={"fit": "dirac"})


def _residual(f, a, x, w):
    return float(np.sqrt(w @ (f.smoothed(a, 1.0) - x) ** 2))


def bass_fixed_point(mu, nu, opts=None):
    """Fit ``(alpha, f)`` on one irreducible component by fixed-point iteration.

    Starting from ``alpha = mu``, alternate (i) the knots of ``f`` so that
    ``f(alpha * gamma) = nu`` exactly, and (ii) ``alpha <- f_0^{-1}(mu)``,
    until ``W_2(f_0(alpha), mu)`` drops below ``opts.tol * sd(nu)``.

    Returns a model with ``converged=False`` if the cap is reached.

    Raises
    ------
    MeasureError
        For dimension other than 1 or a Dirac target (no component).
    """
    opts = opts or BassOptions()
    if mu.dim != 1 or nu.dim != 1:
        raise MeasureError("the fixed point runs on the line")
    if nu.size < 2:
        raise MeasureError("degenerate component: nu is a single atom")
    x, w = mu.x, mu.weights
    if x[0] <= nu.x[0] or x[-1] >= nu.x[-1]:
        raise MeasureError("mu must sit strictly inside the hull of nu on an irreducible component")
    scale = float(np.sqrt(nu.weights @ (nu.x - mean(nu)) ** 2))
    tol = opts.tol * scale
    a = x.astype(float).copy()
    rho = opts.damping
    history = []
    ups = 0
    it = 0
    while True:
        f = _step_map(knots_for(a, w, nu.weights), nu)
        r = _residual(f, a, x, w)
        history.append(r)
        if r <= tol or it >= opts.max_iter:
            break
        if len(history) > 1 and r > history[-2]:
            ups += 1
            if opts.auto_damping and ups >= 3 and rho > 0.5:
                rho = 0.5
                log.info("Bass fixed point: residual rose 3 times, damping to 0.5")
        else:
            ups = 0
        it += 1
        a = (1.0 - rho) * a + rho * f.smoothed_inverse(x, 1.0)
    return BassModel(
        mu, nu, a, f, residual=r, iterations=it, converged=r <= tol, history=history,
        meta={"fit": "fixed-point", "damping": rho, "tol": tol},
    )


def bass_from_dual(mu, nu):
    """Fit ``(alpha, f)`` on one component by Newton's method on the smooth dual."""
    if nu.size < 2:
        raise MeasureError("degenerate component: nu is a single atom")
    d = solve_dual(mu.x, mu.weights, nu.x, nu.weights)
    f = _step_map(d.zeta, nu)
    return BassModel(
        mu, nu, d.b, f, residual=_residual(f, d.b, mu.x, mu.weights), iterations=d.iterations,
        converged=d.converged, meta={"fit": "dual-newton"},
    )


def eval_f_t(model, t, b, method="exact", order=64):
    """``f_t(b) = E f(b + sqrt(1 - t) Z)``; ``f`` itself for ``t >= 1``.

    ``model`` is a :class:`BassModel` or a :class:`MonotoneMap`.
    ``method="exact"`` integrates the breakpoint table in closed form;
    ``method="gauss-hermite"`` uses an ``order``-point rule.

    Examples
    --------
    >>> sign = MonotoneMap(np.array([0.0]), np.array([-1.0, 1.0]))
    >>> round(eval_f_t(sign, 0.0, 1.0), 4)
    0.6827
    """
    f = model.f if isinstance(model, BassModel) else model
    if t >= 1:
        return f(b)
    s = np.sqrt(1.0 - t)
    if method == "exact":
        return f.smoothed(b, s)
    if method == "gauss-hermite":
        z, w = _gh(order)
        b = np.asarray(b, dtype=float)
        out = f(b.reshape(-1, 1) + s * z[None, :]) @ w
        out = out.reshape(b.shape)
        return out if out.ndim else float(out)
    raise ValueError(f"unknown method {method!r}")


def _fix_row_means(R, y, x):
    """Shift mass between the atoms bracketing ``x`` to make each row mean exact."""
    R = R.copy()
    for i in range(R.shape[0]):
        d = x[i] - R[i] @ y
        if d == 0:
            continue
        k = int(np.clip(np.searchsorted(y, x[i], side="right"), 1, y.size - 1))
        lo, hi = k - 1, k
        eps = d / (y[hi] - y[lo])
        # eps > 0 moves mass up from lo to hi
        src = lo if eps > 0 else hi
        if R[i, src] >= abs(eps):
            R[i, lo] -= eps
            R[i, hi] += eps
    return R


def kernel_from_bass(model, target_support=None):
    """Martingale kernel ``pi_x = law f(B_1) | B_0 = f_0^{-1}(x)`` of a fitted model.

    Rows are the Gaussian masses of the knot cells of ``f``, moved onto
    ``target_support`` (default: the atoms of ``nu``) by monotone rounding
    to the nearest atom. Row means are then corrected by a two-atom mass
    shift and the marginals by :func:`sbm.kernel.project_kernel`.

    Raises
    ------
    KernelError
        If an atom of ``mu`` lies outside the open range of ``f_0``.
    """
    mu, nu = model.mu, model.nu_target
    y = nu.x
    x = mu.x
    if y.size == 1:
        return MartingaleKernel(mu, nu, np.ones((mu.size, 1)))
    if np.any(x <= y[0]) or np.any(x >= y[-1]):
        raise KernelError("atom of mu outside the range of f_0")
    b0 = model.f0_inverse(x)
    R = kernel_rows(model.f.knots, b0)
    if target_support is not None:
        tgt = np.sort(np.asarray(target_support, dtype=float).ravel())
        idx = np.clip(np.searchsorted(tgt, y), 1, max(tgt.size - 1, 1))
        nearest = np.where(np.abs(tgt[idx - 1] - y) <= np.abs(tgt[np.minimum(idx, tgt.size - 1)] - y), idx - 1, idx)
        rounded = tgt[np.minimum(nearest, tgt.size - 1)]
        nu = make_measure(rounded, nu.weights)
        cols = np.searchsorted(nu.x, rounded)
        moved = np.zeros((mu.size, nu.size))
        np.add.at(moved.T, cols, R.T)
        R, y = moved, nu.x
    R = _fix_row_means(R, y, x)
    return project_kernel(MartingaleKernel(mu, nu, R))


# -- plane -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PowerMap:
    """``f(b) = argmax_y (y . b - phi(y))``: gradient of a convex piecewise-linear function."""

    atoms: np.ndarray
    phi: np.ndarray

    def __call__(self, b):
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return self.atoms[np.argmax(b @ self.atoms.T - self.phi[None, :], axis=1)]


@dataclass(frozen=True, eq=False)
class PlanarModel:
    """Evaluation-only model in R^2 built from a solved kernel."""

    mu: object
    nu_target: object
    base_points: np.ndarray
    f: PowerMap
    quad_order: int = 16
    meta: dict = field(default_factory=dict)

    def f_t(self, t, b):
        """``E f(b + sqrt(1 - t) Z)`` by tensor Gauss-Hermite quadrature."""
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if t >= 1:
            return self.f(b)
        z, w = _gh(self.quad_order)
        zz = np.stack(np.meshgrid(z, z, indexing="ij"), axis=-1).reshape(-1, 2)
        ww = np.outer(w, w).ravel()
        s = np.sqrt(1.0 - t)
        out = np.empty_like(b)
        for i in range(b.shape[0]):
            out[i] = ww @ self.f(b[i] + s * zz)
        return out


def planar_model_from_solution(sol, quad_order=16):
    """Recover ``(alpha, grad F)`` from a solved planar kernel.

    On the support of the optimal kernel the row potentials have the form
    ``phi_x(y) = phi(y) - b_x . y + c_x``. A least-squares fit over all
    charged pairs gives a common ``phi`` and base points ``b_x``.
    """
    from .maxcorr import gaussian_disc, maxcorr_disc

    kernel = sol.kernel
    mu, nu = kernel.mu, kernel.nu
    if mu.dim != 2:
        raise MeasureError("planar models need dim 2")
    g = gaussian_disc(2, sol.info.get("quad_order", 32) if hasattr(sol, "info") else 32)
    n, m = mu.size, nu.size
    rows, rhs = [], []
    for i in range(n):
        keep = np.flatnonzero(kernel.pi[i] > 1e-12)
        res = maxcorr_disc(make_measure(nu.atoms[keep], kernel.pi[i, keep]), g)
        for jj, j in enumerate(keep):
            r = np.zeros(m + 3 * n)
            r[j] = 1.0
            r[m + 2 * i : m + 2 * i + 2] = -nu.atoms[j]
            r[m + 2 * n + i] = 1.0
            rows.append(r)
            rhs.append(res.dual_potential[jj])
    coef = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]
    phi = coef[:m]
    b = coef[m : m + 2 * n].reshape(n, 2)
    # (b, phi) -> (b + v, phi + y.v) leaves every row potential unchanged;
    # pick v so that alpha has the mean of mu
    v = mu.weights @ mu.atoms - mu.weights @ b
    b = b + v
    phi = phi + nu.atoms @ v
    return PlanarModel(mu, nu, b, PowerMap(nu.atoms.copy(), phi), quad_order=quad_order, meta={"fit": "potential-lsq"})
