"""Paths, marginal flows and structural checks of stretched Brownian motion.

A :class:`SbmModel` glues one Bass model per irreducible component with
the static part, where paths stay constant. Simulation draws the atom of
``mu``, starts the driver at that atom's base point and evaluates
``M_t = f_t(b + W_t)``. Randomness comes in fixed-size chunks, each with
its own stream ``SeedSequence([seed, chunk])``, so results do not depend
on the number of worker threads.
"""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._dual import gauss_mass
from .bass import BassModel, BassOptions, PlanarModel, _fix_row_means, bass_fixed_point, bass_from_dual
from .decompose import ConvexOrderError, decompose
from .maxcorr import gaussian_disc
from .measures import (
    MeasureError,
    convex_order_1d,
    make_measure,
    mean,
    measure_to_dict,
    second_moment,
    wasserstein2_1d,
)
from .wot import WotOptions, solve_wot_1d_by_components

__all__ = [
    "SbmModel",
    "PathEnsemble",
    "InterpolationCurve",
    "ScalingReport",
    "ConsistencyReport",
    "ChainModel",
    "fit_sbm",
    "simulate",
    "interpolate",
    "flow_measure",
    "check_scaling",
    "check_time_consistency",
    "localvol_chain",
    "parse_grid",
    "thread_count",
]

CHUNK = 8192


def thread_count(threads=None):
    """Worker threads: explicit value, else ``MBB_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get("MBB_THREADS", "1") or 1)
    return max(1, int(threads))


def parse_grid(text):
    """``"a:b:n"`` -> ``n`` equally spaced points from ``a`` to ``b`` inclusive."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError as exc:
        raise MeasureError(f"grid must look like 'start:stop:count', got {text!r}") from exc
    if n < 1 or not (0.0 <= a <= b <= 1.0):
        raise MeasureError(f"grid {text!r} must satisfy 0 <= start <= stop <= 1 and count >= 1")
    return np.linspace(a, b, n) if n > 1 else np.array([a])


# -- models ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SbmModel:
    """Glued sBm: per-atom component index (-1 = static) and base point."""

    mu: object
    nu: object
    components: list
    intervals: list
    atom_component: np.ndarray
    atom_base: np.ndarray

    @property
    def component_count(self):
        return len(self.components)

    def value(self):
        """``E[M_1 (B_1 - B_0)]`` summed over components with their masses."""
        return float(sum(m.value() * self._mass(k) for k, m in enumerate(self.components)))

    def _mass(self, k):
        return float(self.mu.weights[self.atom_component == k].sum())

    def to_dict(self):
        return {
            "mu": measure_to_dict(self.mu),
            "nu": measure_to_dict(self.nu),
            "components": [m.to_dict() for m in self.components],
            "intervals": [[float(a), float(b)] for a, b in self.intervals],
        }


def fit_sbm(mu, nu, method="newton", bass_opts=None, order_tol=1e-9):
    """Decompose and fit one Bass model per component.

    ``method="newton"`` solves the smooth dual; ``"picard"`` runs the
    fixed-point iteration.
    """
    if mu.dim != 1:
        raise MeasureError("fit_sbm works on the line")
    dec = decompose(mu, nu, tol=order_tol)
    comp = np.full(mu.size, -1)
    base = np.zeros(mu.size)
    models, intervals = [], []
    for k, c in enumerate(dec.components):
        if method == "newton":
            m = bass_from_dual(c.mu_k, c.nu_k)
        elif method == "picard":
            m = bass_fixed_point(c.mu_k, c.nu_k, bass_opts or BassOptions())
        else:
            raise ValueError(f"unknown fit method {method!r}")
        rows = np.searchsorted(mu.x, c.mu_k.x)
        comp[rows] = k
        base[rows] = m.base_points
        models.append(m)
        intervals.append(c.interval)
    return SbmModel(mu, nu, models, intervals, comp, base)


def _as_sbm(model):
    if isinstance(model, SbmModel):
        return model
    if isinstance(model, BassModel):
        return SbmModel(model.mu, model.nu_target, [model], [(-np.inf, np.inf)],
                        np.zeros(model.mu.size, dtype=int), model.base_points.copy())
    raise TypeError(f"expected a fitted model, got {type(model).__name__}")


# -- simulation --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """``paths[i, k]`` is path ``i`` at ``times[k]``.

    ``driver`` (optional) holds ``B_t - B_0`` on the same grid and
    ``start_atom`` the index of the atom of ``mu`` each path started from.
    """

    times: np.ndarray
    paths: np.ndarray
    seed: int
    model_ref: str
    driver: np.ndarray = None
    start_atom: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.paths.shape[0]

    def marginal(self, k):
        return make_measure(self.paths[:, k])

    def summary(self):
        p = self.paths
        return {
            "model": self.model_ref,
            "seed": int(self.seed),
            "paths": int(p.shape[0]),
            "times": self.times.tolist(),
            "mean": p.mean(axis=0).tolist(),
            "second_moment": (p ** 2).mean(axis=0).tolist(),
            "min": float(p.min()),
            "max": float(p.max()),
            **self.meta,
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_id", "t", "value"])
            for i in range(self.paths.shape[0]):
                for t, v in zip(self.times, self.paths[i]):
                    w.writerow([i, repr(float(t)), repr(float(v))])


def _chunks(N):
    return [(c, min(CHUNK, N - c * CHUNK)) for c in range((N + CHUNK - 1) // CHUNK)]


def _start_atoms(rng, weights, n):
    cdf = np.cumsum(weights)
    return np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), weights.size - 1)


def _evolve(model, atoms, local_times, rng, keep_driver):
    """Run one sBm piece for paths starting at ``atoms``; returns values (and driver)."""
    n = atoms.size
    T = local_times.size
    dt = np.diff(np.concatenate(([0.0], local_times)))
    W = np.cumsum(rng.standard_normal((n, T)) * np.sqrt(dt)[None, :], axis=1)
    out = np.empty((n, T))
    comp = model.atom_component[atoms]
    static = comp < 0
    out[static] = model.mu.x[atoms[static]][:, None]
    for k, m in enumerate(model.components):
        sel = comp == k
        if not sel.any():
            continue
        B = model.atom_base[atoms[sel]][:, None] + W[sel]
        for j, t in enumerate(local_times):
            # M_0 is the starting atom itself, not its fitted image f_0(b)
            out[sel, j] = model.mu.x[atoms[sel]] if t == 0 else m.f.smoothed(B[:, j], np.sqrt(1.0 - t))
    return out, (W if keep_driver else None)


def _run_chain(pieces, N, seed, threads, keep_driver):
    """Simulate glued pieces; ``pieces`` is a list of (model, local_times, global_times)."""

    def one(chunk):
        c, n = chunk
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(c)]))
        first = pieces[0][0]
        atoms = _start_atoms(rng, first.mu.weights, n)
        start = atoms.copy()
        cols, drv = [], []
        for p, (model, local, _) in enumerate(pieces):
            if p > 0:
                # restart from the realised value, rounded to the nearest atom of the new start law
                x = model.mu.x
                v = cols[-1][:, -1]
                idx = np.clip(np.searchsorted(x, v), 1, max(x.size - 1, 1))
                lo = np.maximum(idx - 1, 0)
                hi = np.minimum(idx, x.size - 1)
                atoms = np.where(np.abs(x[lo] - v) <= np.abs(x[hi] - v), lo, hi)
            vals, W = _evolve(model, atoms, local, rng, keep_driver)
            cols.append(vals)
            if keep_driver:
                drv.append(W if not drv else W + drv[-1][:, -1:])
        return np.hstack(cols), (np.hstack(drv) if keep_driver else None), start

    chunks = _chunks(N)
    workers = thread_count(threads)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, chunks))
    else:
        results = [one(c) for c in chunks]
    paths = np.vstack([r[0] for r in results])
    driver = np.vstack([r[1] for r in results]) if keep_driver else None
    start = np.concatenate([r[2] for r in results])
    return paths, driver, start


def simulate(model, times, N, seed=0, threads=None, keep_driver=False):
    """Sample ``N`` paths of the fitted martingale on ``times`` (within [0, 1]).

    Paths are reproducible from ``seed`` whatever the thread count.
    """
    if N < 1:
        raise ValueError("need at least one path")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] > 1:
        raise MeasureError("times must be strictly increasing within [0, 1]")
    if isinstance(model, PlanarModel):
        return _simulate_planar(model, times, N, seed)
    sbm = _as_sbm(model)
    paths, driver, start = _run_chain([(sbm, times, times)], N, seed, threads, keep_driver)
    return PathEnsemble(times, paths, int(seed), f"sbm[{sbm.component_count} components]", driver, start)


def _simulate_planar(model, times, N, seed):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    atoms = _start_atoms(rng, model.mu.weights, N)
    dt = np.diff(np.concatenate(([0.0], times)))
    W = np.cumsum(rng.standard_normal((N, times.size, 2)) * np.sqrt(dt)[None, :, None], axis=1)
    B = model.base_points[atoms][:, None, :] + W
    paths = np.empty_like(B)
    for j, t in enumerate(times):
        paths[:, j] = model.f_t(t, B[:, j])
    return PathEnsemble(times, paths, int(seed), "planar", W, atoms)


# -- interpolation -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InterpolationCurve:
    times: np.ndarray
    measures: list
    method: str
    seed: int = None

    def means(self):
        return np.array([mean(m) for m in self.measures])

    def second_moments(self):
        return np.array([second_moment(m) for m in self.measures])

    def to_dict(self):
        return {
            "method": self.method,
            "seed": self.seed,
            "times": self.times.tolist(),
            "measures": [measure_to_dict(m) for m in self.measures],
        }


def _nodes(order):
    g = gaussian_disc(1, order, "quantile-grid")
    return g.nodes[:, 0], g.weights


def _component_flow(m, b, x, t, u, w):
    """Atoms of ``f_t(b + sqrt(t) u)`` per base point, re-centred on ``x`` block by block."""
    vals = m.f.smoothed((b[:, None] + np.sqrt(t) * u[None, :]).ravel(), np.sqrt(1.0 - t)).reshape(b.size, u.size)
    return vals + (x - vals @ w)[:, None]


def flow_measure(model, t, order=32):
    """Quadrature discretisation of the law of ``M_t``.

    ``t = 1`` gives ``nu`` itself (exact cell masses of each component);
    for ``t < 1`` each atom ``x`` of ``mu`` spreads over ``order``
    quantile nodes, shifted so the block keeps mean ``x``. At ``t = 0``
    this returns ``mu``.
    """
    sbm = _as_sbm(model)
    mu = sbm.mu
    pts, wts = [mu.x[sbm.atom_component < 0]], [mu.weights[sbm.atom_component < 0]]
    u, w = _nodes(order)
    for k, m in enumerate(sbm.components):
        sel = sbm.atom_component == k
        b, x, mw = sbm.atom_base[sel], mu.x[sel], mu.weights[sel]
        if t >= 1:
            R = _cells(m, b, 1.0)
            pts.append(m.nu_target.x)
            wts.append(mw @ R)
        else:
            pts.append(_component_flow(m, b, x, t, u, w).ravel())
            wts.append(np.outer(mw, w).ravel())
    return make_measure(np.concatenate(pts), np.concatenate(wts))


def _cells(m, beta, scale):
    """Law of ``f(beta + scale Z)`` on the atoms of ``nu``, one row per ``beta``."""
    edges = np.concatenate(([-np.inf], m.f.knots, [np.inf]))
    return gauss_mass((edges[None, :-1] - beta[:, None]) / scale, (edges[None, 1:] - beta[:, None]) / scale)


def interpolate(model, times, method="quadrature", order=32, N=20000, seed=0, threads=None):
    """Displacement interpolation ``law(M_t)`` on ``times``.

    ``method="quadrature"`` uses :func:`flow_measure`; ``"montecarlo"``
    takes empirical laws of :func:`simulate`.
    """
    times = np.asarray(times, dtype=float)
    if method == "quadrature":
        return InterpolationCurve(times, [flow_measure(model, t, order) for t in times], "quadrature")
    if method == "montecarlo":
        ens = simulate(model, times, N, seed, threads)
        return InterpolationCurve(times, [ens.marginal(k) for k in range(times.size)], "montecarlo", int(seed))
    raise ValueError(f"unknown method {method!r}")


def _two_stage(model, r, t, order):
    """Discretise ``(law M_r, law M_t)`` so that a martingale links them exactly.

    Stage one spreads each atom ``x`` over ``order`` nodes at time ``r``
    (block means fixed to ``x``); stage two spreads each of those over
    ``order`` nodes at time ``t``, block means fixed to the stage-one
    atom, or for ``t = 1`` uses the exact cell masses on ``nu`` with a
    two-atom mean correction.
    """
    sbm = _as_sbm(model)
    mu = sbm.mu
    u, w = _nodes(order)
    st = sbm.atom_component < 0
    r_pts, r_wts = [mu.x[st]], [mu.weights[st]]
    t_pts, t_wts = [mu.x[st]], [mu.weights[st]]
    for k, m in enumerate(sbm.components):
        sel = sbm.atom_component == k
        b, x, mw = sbm.atom_base[sel], mu.x[sel], mu.weights[sel]
        A = _component_flow(m, b, x, r, u, w) if r < 1 else None
        beta = (b[:, None] + np.sqrt(r) * u[None, :]).ravel()
        a = A.ravel()
        wa = np.outer(mw, w).ravel()
        r_pts.append(a)
        r_wts.append(wa)
        if t >= 1:
            R = _fix_row_means(_cells(m, beta, np.sqrt(1.0 - r)), m.nu_target.x, a)
            t_pts.append(m.nu_target.x)
            t_wts.append(wa @ R)
        else:
            s = t - r
            vals = m.f.smoothed((beta[:, None] + np.sqrt(s) * u[None, :]).ravel(), np.sqrt(1.0 - t))
            vals = vals.reshape(beta.size, u.size)
            vals += (a - vals @ w)[:, None]
            t_pts.append(vals.ravel())
            t_wts.append(np.outer(wa, w).ravel())
    return (
        make_measure(np.concatenate(r_pts), np.concatenate(r_wts)),
        make_measure(np.concatenate(t_pts), np.concatenate(t_wts)),
    )


# -- structural checks ---------------------------------------------------------


@dataclass(frozen=True)
class ScalingReport:
    r: float
    t: float
    full_value: float
    sub_value: float
    sqrt_form: float
    squared_form_lhs: float
    squared_form_rhs: float
    relative_error: float
    threshold: float
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def _sub_solve(a, b, gap_tol):
    return solve_wot_1d_by_components(a, b, WotOptions(method="newton", gap_tol=gap_tol))


def check_scaling(mu, nu, r, t, order=12, threshold=3e-2, fit="newton", gap_tol=1e-6):
    """Compare ``MT(law M_r, law M_t)`` with ``sqrt(t - r) MT(mu, nu)``.

    Both normalisations are reported: the square-root form and its square,
    ``MT^2(law M_r, law M_t)`` against ``(t - r) MT^2(mu, nu)``.
    """
    if not (0 <= r < t <= 1):
        raise ValueError("need 0 <= r < t <= 1")
    model = fit_sbm(mu, nu, method=fit)
    full = solve_wot_1d_by_components(mu, nu, WotOptions(method="newton", gap_tol=gap_tol)).value
    a, b = _two_stage(model, r, t, order)
    sub = _sub_solve(a, b, gap_tol).value
    rhs = np.sqrt(t - r) * full
    scale = max(abs(rhs), 1e-12)
    rel = abs(sub - rhs) / scale if abs(rhs) > 1e-12 or abs(sub) > 1e-12 else 0.0
    return ScalingReport(
        r, t, full, sub, rhs, sub ** 2, (t - r) * full ** 2, float(rel), threshold, bool(rel <= threshold)
    )


@dataclass(frozen=True)
class ConsistencyReport:
    s: float
    t: float
    lam: float
    w2_gap: float
    threshold: float
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def check_time_consistency(mu, nu, s, t, lam, order=12, tol=5e-2, fit="newton"):
    """W_2 distance between ``[law M_s, law M_t]_lam`` and ``law M_{(1-lam)s + lam t}``.

    The right side is discretised by the same two-stage scheme as the
    pair ``(law M_s, law M_t)``, which makes ``lam = 0`` and ``lam = 1``
    exact identities.
    """
    if not (0 <= s < t <= 1 and 0 <= lam <= 1):
        raise ValueError("need 0 <= s < t <= 1 and 0 <= lam <= 1")
    model = fit_sbm(mu, nu, method=fit)
    a, b = _two_stage(model, s, t, order)
    if lam == 0:
        lhs = a
    elif lam == 1:
        lhs = b
    else:
        inner = fit_sbm(a, b, method=fit)
        lhs = flow_measure(inner, lam, order)
    u = (1 - lam) * s + lam * t
    rhs = _two_stage(model, s, u, order)[1] if u > s else a
    gap = wasserstein2_1d(lhs, rhs)
    return ConsistencyReport(s, t, lam, float(gap), tol, bool(gap <= tol))


# -- local volatility chain --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChainModel:
    times: np.ndarray
    pieces: list


def localvol_chain(peacock, n, steps=16, N=20000, seed=0, fit="newton", threads=None, keep_driver=False):
    """Chain sBm pieces between every ``K/n``-th marginal of a peacock.

    Parameters
    ----------
    peacock : list of (float, DiscreteMeasure)
        Times and marginals increasing in convex order.
    n : int
        Number of pieces; must divide ``len(peacock) - 1``.
    steps : int
        Grid points per piece (excluding its start).

    Returns
    -------
    (ChainModel, PathEnsemble)
    """
    peacock = sorted(peacock, key=lambda p: p[0])
    K = len(peacock) - 1
    if K < 1 or n < 1 or K % n:
        raise MeasureError(f"{n} pieces do not divide a peacock with {K} intervals")
    stride = K // n
    picked = peacock[::stride]
    for (s, a), (t, b) in zip(picked, picked[1:]):
        if not convex_order_1d(a, b):
            raise ConvexOrderError(f"marginals at t={s} and t={t} are not in convex order")
    pieces, models = [], []
    grid = [None]
    for p, ((s, a), (t, b)) in enumerate(zip(picked, picked[1:])):
        m = fit_sbm(a, b, method=fit)
        local = np.linspace(0.0, 1.0, steps + 1)
        if p > 0:
            local = local[1:]
        pieces.append((m, local, s + (t - s) * local))
        models.append(m)
        grid.append(s + (t - s) * local)
    times = np.concatenate(grid[1:])
    paths, driver, start = _run_chain(pieces, N, seed, threads, keep_driver)
    ens = PathEnsemble(times, paths, int(seed), f"localvol[{n} pieces]", driver, start)
    return ChainModel(np.array([p[0] for p in picked]), models), ens


def ensemble_to_json(ens):
    return json.dumps(ens.summary(), sort_keys=True)
