# cython: language_level=3
"""Compiled numerical kernels; mirrors ``sbm._kernels_py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp, sqrt, fabs, INFINITY, pow
from scipy.special.cython_special cimport ndtri

cnp.import_array()

cdef double _SQRT1_2 = 0.7071067811865476
cdef double _INV_SQRT_2PI = 0.3989422804014327
# Phi(-9) ~ 1e-19: knots farther than this many scales are exactly saturated.
cdef double _WINDOW = 9.0


cdef inline double _ncdf(double u) nogil:
    return 0.5 * erfc(-u * _SQRT1_2)


cdef inline Py_ssize_t _lower(const double[::1] a, double v) nogil:
    # first index with a[i] >= v
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _upper(const double[::1] a, double v) nogil:
    # first index with a[i] > v
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline double _eval(double p, const double[::1] knots, const double[::1] jumps,
                         const double[::1] cum, double scale, double base) nogil:
    cdef Py_ssize_t i, a, b
    cdef double acc
    if scale <= 0.0:
        return base + cum[_upper(knots, p)]
    a = _lower(knots, p - _WINDOW * scale)
    b = _upper(knots, p + _WINDOW * scale)
    acc = base + cum[a]
    for i in range(a, b):
        acc += jumps[i] * _ncdf((p - knots[i]) / scale)
    return acc


cdef inline double _deriv(double p, const double[::1] knots, const double[::1] jumps,
                          double scale) nogil:
    cdef Py_ssize_t i, a, b
    cdef double acc = 0.0, u
    a = _lower(knots, p - _WINDOW * scale)
    b = _upper(knots, p + _WINDOW * scale)
    for i in range(a, b):
        u = (p - knots[i]) / scale
        acc += jumps[i] * exp(-0.5 * u * u)
    return acc * _INV_SQRT_2PI / scale


def _prefix(const double[::1] jumps):
    cdef Py_ssize_t i, n = jumps.shape[0]
    out = np.empty(n + 1)
    cdef double[::1] c = out
    c[0] = 0.0
    for i in range(n):
        c[i + 1] = c[i] + jumps[i]
    return out


def smooth_step(points, knots, jumps, double scale, double base):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[::1] k = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] j = np.ascontiguousarray(jumps, dtype=np.float64)
    cdef const double[::1] cum = _prefix(j)
    cdef const double[::1] p = pts.ravel()
    out = np.empty(p.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(p.shape[0]):
            o[i] = _eval(p[i], k, j, cum, scale, base)
    return out.reshape(pts.shape)


def smooth_step_deriv(points, knots, jumps, double scale):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[::1] k = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] j = np.ascontiguousarray(jumps, dtype=np.float64)
    cdef const double[::1] p = pts.ravel()
    out = np.empty(p.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(p.shape[0]):
            o[i] = _deriv(p[i], k, j, scale)
    return out.reshape(pts.shape)


def smooth_step_inverse(targets, knots, jumps, double scale, double base, double tol=1e-12):
    tg = np.ascontiguousarray(targets, dtype=np.float64)
    cdef const double[::1] k = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] j = np.ascontiguousarray(jumps, dtype=np.float64)
    cdef const double[::1] cum = _prefix(j)
    cdef const double[::1] t = tg.ravel()
    out = np.empty(t.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i, it, n = k.shape[0]
    cdef double lo, hi, x, fx, d, nx
    with nogil:
        for i in range(t.shape[0]):
            lo = k[0] - 40.0 * scale
            hi = k[n - 1] + 40.0 * scale
            x = 0.5 * (lo + hi)
            for it in range(400):
                fx = _eval(x, k, j, cum, scale, base) - t[i]
                if fx < 0.0:
                    lo = x
                else:
                    hi = x
                if hi - lo < tol:
                    break
                d = _deriv(x, k, j, scale)
                nx = x - fx / d if d > 0.0 else 0.5 * (lo + hi)
                if not (nx > lo and nx < hi):
                    nx = 0.5 * (lo + hi)
                elif fabs(nx - x) < 0.25 * tol:
                    # Newton has converged; close the bracket around it
                    x = nx
                    break
                x = nx
            o[i] = x if hi - lo >= tol else 0.5 * (lo + hi)
    return out.reshape(tg.shape)


def wasserstein_1d(xa, wa, xb, wb, double p):
    cdef const double[::1] a = np.ascontiguousarray(xa, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(xb, dtype=np.float64)
    cdef const double[::1] pa = np.ascontiguousarray(wa, dtype=np.float64)
    cdef const double[::1] pb = np.ascontiguousarray(wb, dtype=np.float64)
    cdef Py_ssize_t i = 0, k = 0, na = a.shape[0], nb = b.shape[0]
    cdef double ra = pa[0], rb = pb[0], m, acc = 0.0, d
    with nogil:
        while True:
            m = ra if ra < rb else rb
            d = fabs(a[i] - b[k])
            acc += m * (d if p == 1.0 else pow(d, p))
            ra -= m
            rb -= m
            if ra <= 1e-300:
                i += 1
                if i == na:
                    break
                ra = pa[i] + (ra if ra > 0 else 0.0)
            if rb <= 1e-300:
                k += 1
                if k == nb:
                    break
                rb = pb[k] + (rb if rb > 0 else 0.0)
    if p == 1.0:
        return acc
    if p == 2.0:
        return sqrt(acc)
    return acc ** (1.0 / p)


def maxcorr_rows(weights, y):
    w_arr = np.atleast_2d(np.ascontiguousarray(weights, dtype=np.float64))
    cdef const double[:, ::1] w = w_arr
    cdef const double[::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t r = w.shape[0], m = w.shape[1], row, i, first, last
    values = np.zeros(r)
    pot = np.empty((r, m))
    cdef double[::1] v = values
    cdef double[:, ::1] phi = pot
    tails_arr = np.empty(m + 1)
    cdef double[::1] tails = tails_arr
    cdef double head, tail, z
    with nogil:
        for row in range(r):
            first = 0
            while first < m and w[row, first] <= 0.0:
                first += 1
            if first == m:
                for i in range(m):
                    phi[row, i] = INFINITY
                continue
            last = m - 1
            while last > first and w[row, last] <= 0.0:
                last -= 1
            tails[m] = 0.0
            for i in range(m - 1, -1, -1):
                tails[i] = tails[i + 1] + w[row, i]
            for i in range(first):
                phi[row, i] = INFINITY
            for i in range(last + 1, m):
                phi[row, i] = INFINITY
            phi[row, first] = 0.0
            head = 0.0
            for i in range(first, last):
                head += w[row, i]
                tail = tails[i + 1]
                if head <= 0.5:
                    z = ndtri(head)
                else:
                    z = -ndtri(tail)
                v[row] += (yy[i + 1] - yy[i]) * exp(-0.5 * z * z) * _INV_SQRT_2PI
                phi[row, i + 1] = phi[row, i] + (yy[i + 1] - yy[i]) * z
    return values, pot
