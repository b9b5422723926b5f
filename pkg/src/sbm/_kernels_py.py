"""Pure-numpy implementations of the numerical kernels.

Every function here has a twin with the same signature in the compiled
``_kernels`` extension. ``sbm._core`` picks one at import time.
"""

import numpy as np
from scipy.special import ndtr, ndtri

_SQRT_2PI = np.sqrt(2.0 * np.pi)
_CHUNK = 1 << 18


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def smooth_step(points, knots, jumps, scale, base):
    """Evaluate ``base + sum_i jumps[i] * Phi((p - knots[i]) / scale)``.

    ``knots`` must be sorted ascending. ``scale == 0`` gives the
    right-continuous step function itself.
    """
    points = _as_f64(points)
    knots = _as_f64(knots)
    jumps = _as_f64(jumps)
    flat = points.ravel()
    if scale <= 0.0:
        cum = np.concatenate(([0.0], np.cumsum(jumps)))
        idx = np.searchsorted(knots, flat, side="right")
        return (base + cum[idx]).reshape(points.shape)
    out = np.empty_like(flat)
    step = max(1, _CHUNK // max(1, knots.size))
    for s in range(0, flat.size, step):
        p = flat[s:s + step]
        out[s:s + step] = base + ndtr((p[:, None] - knots[None, :]) / scale) @ jumps
    return out.reshape(points.shape)


def smooth_step_deriv(points, knots, jumps, scale):
    """Derivative in ``p`` of :func:`smooth_step` (``scale > 0``)."""
    points = _as_f64(points)
    knots = _as_f64(knots)
    jumps = _as_f64(jumps)
    flat = points.ravel()
    out = np.empty_like(flat)
    step = max(1, _CHUNK // max(1, knots.size))
    for s in range(0, flat.size, step):
        u = (flat[s:s + step, None] - knots[None, :]) / scale
        out[s:s + step] = (np.exp(-0.5 * u * u) / (_SQRT_2PI * scale)) @ jumps
    return out.reshape(points.shape)


def smooth_step_inverse(targets, knots, jumps, scale, base, tol=1e-12):
    """Solve ``smooth_step(p) = target`` for each target by bisection.

    Targets must lie strictly inside ``(base, base + sum(jumps))`` and all
    jumps must be positive; the function is then strictly increasing.
    """
    targets = _as_f64(targets)
    knots = _as_f64(knots)
    flat = targets.ravel()
    lo = np.full(flat.shape, knots[0] - 40.0 * scale)
    hi = np.full(flat.shape, knots[-1] + 40.0 * scale)
    n_iter = int(np.ceil(np.log2(max((hi[0] - lo[0]) / tol, 2.0)))) + 2
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = smooth_step(mid, knots, jumps, scale, base) < flat
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return (0.5 * (lo + hi)).reshape(targets.shape)


def wasserstein_1d(xa, wa, xb, wb, p):
    """W_p between two sorted discrete measures on the line via quantiles."""
    xa = _as_f64(xa)
    xb = _as_f64(xb)
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    u = np.union1d(ca, cb)
    du = np.diff(np.concatenate(([0.0], u)))
    mid = u - 0.5 * du
    qa = xa[np.minimum(np.searchsorted(ca, mid), xa.size - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mid), xb.size - 1)]
    diff = np.abs(qa - qb)
    if p == 1:
        return float(du @ diff)
    if p == 2:
        return float(np.sqrt(du @ diff ** 2))
    return float((du @ diff ** p) ** (1.0 / p))


def maxcorr_rows(weights, y):
    """Gaussian max-correlation value and dual potential for each row.

    ``weights`` is an (r, m) array of probability rows over the sorted
    atoms ``y``. Returns ``(values, potentials)``; potentials vanish at the
    first charged atom of each row and are ``+inf`` outside the hull of
    the row's support.
    """
    w = np.atleast_2d(_as_f64(weights))
    y = _as_f64(y)
    r, m = w.shape
    dy = np.diff(y)
    head = np.cumsum(w, axis=1)[:, :-1]
    tail = np.cumsum(w[:, ::-1], axis=1)[:, ::-1][:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(head <= 0.5, ndtri(np.clip(head, 0.0, 1.0)), -ndtri(np.clip(tail, 0.0, 1.0)))
    dens = np.exp(-0.5 * np.where(np.isfinite(z), z, np.inf) ** 2) / _SQRT_2PI
    values = dens @ dy

    charged = w > 0
    first = np.argmax(charged, axis=1)
    last = m - 1 - np.argmax(charged[:, ::-1], axis=1)
    cols = np.arange(m)
    inside = (cols[None, :] >= first[:, None]) & (cols[None, :] <= last[:, None])
    steps = np.where(inside[:, :-1] & inside[:, 1:], z * dy[None, :], 0.0)
    pot = np.concatenate((np.zeros((r, 1)), np.cumsum(steps, axis=1)), axis=1)
    pot -= pot[np.arange(r), first][:, None]
    pot[~inside] = np.inf
    return values, pot
