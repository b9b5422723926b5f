"""Static weak transport problem over martingale kernels.

We maximise ``G(pi) = sum_x mu(x) H(pi_x)`` over kernels with
``mean(pi_x) = x`` and ``sum_x mu(x) pi_x = nu``. ``G`` is concave and the
feasible set is a polytope, so the solver is Frank-Wolfe: linearise ``G``
with the dual potentials returned by the oracle, maximise the linear form
by LP, and line-search along the segment. The LP value also gives the
duality gap used as stopping rule.

On the line, Frank-Wolfe can be warm-started by the exact optimiser of
each irreducible component, obtained from a Newton solve of the smooth
dual (see ``sbm._dual``). The Frank-Wolfe loop then only has to confirm
the gap; it continues from the warm start if the gap is not small enough.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lstsq
from scipy.special import ndtri

from . import _core
from ._dual import kernel_rows, row_values, solve_dual
from .decompose import ConvexOrderError, decompose, glue, static_target
from .kernel import MartingaleKernel, kernel_from_joint, project_kernel_l1
from .lp import LPError, LPInfeasible, martingale_polytope, relative_interior_point, solve_lp
from .maxcorr import gaussian_disc, maxcorr_1d, maxcorr_disc
from .measures import MeasureError, convex_order_1d, convex_order_lp, make_measure, second_moment
from .report import CertificateReport

__all__ = [
    "WotOptions",
    "WotSolution",
    "solve_wot",
    "solve_wot_1d_by_components",
    "wt_to_weak_gozlan",
    "certify_monotonicity",
    "perturb_kernel",
    "kernel_objective",
]

log = logging.getLogger(__name__)

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
_INV_SQRT_2PI = 0.3989422804014327


class InternalInconsistency(RuntimeError):
    """Convex order holds but the martingale polytope came out empty."""


@dataclass(frozen=True)
class WotOptions:
    """Solver settings.

    Attributes
    ----------
    gap_tol : float
        Stop when the Frank-Wolfe gap is below ``gap_tol * (1 + |value|)``.
    max_iter : int
        Frank-Wolfe iteration cap; hitting it sets ``converged=False``.
    line_search_iters : int
        Golden-section iterations on the step size.
    accelerate : {"newton", "none"}
        On the line, also try a primal Newton step each iteration and keep
        whichever of the two candidates scores higher.
    init : {"dual", "interior", "vertex"}
        Starting kernel. ``"dual"`` (1D only, else ``"interior"``) glues
        the per-component solutions of the smooth dual; ``"interior"`` is
        a relative-interior point of the polytope; ``"vertex"`` the
        phase-1 LP vertex.
    method : {"fw", "bass", "newton"}
        Per-component solver used by :func:`solve_wot_1d_by_components`.
    quad_order : int
        Tensor Gauss-Hermite order of the Gaussian discretisation in 2D.
    """

    gap_tol: float = 1e-6
    max_iter: int = 500
    line_search_iters: int = 60
    accelerate: str = "newton"
    init: str = "dual"
    method: str = "fw"
    quad_order: int = 32
    order_tol: float = 1e-9


@dataclass(frozen=True, eq=False)
class WotSolution:
    kernel: MartingaleKernel
    value: float
    gap: float
    iterations: int
    trace: list
    converged: bool = True
    info: dict = field(default_factory=dict)

    def to_dict(self):
        d = self.kernel.to_dict()
        d.update(
            value=float(self.value),
            gap=float(self.gap),
            iterations=int(self.iterations),
            converged=bool(self.converged),
            trace=[float(v) for v in self.trace],
        )
        return d


# -- objective ---------------------------------------------------------------


class _Objective:
    """``G`` and its supergradient on joint matrices ``P``."""

    def __init__(self, mu, nu, quad_order):
        self.mu, self.nu = mu, nu
        self.dim = mu.dim
        if self.dim == 1:
            self.y = nu.x
        else:
            self.g = gaussian_disc(mu.dim, quad_order)

    def _rows(self, P):
        R = np.clip(P, 0.0, None) / self.mu.weights[:, None]
        return R / R.sum(axis=1, keepdims=True)

    def value(self, P):
        R = self._rows(P)
        if self.dim == 1:
            vals, _ = _core.maxcorr_rows(R, self.y)
        else:
            vals = np.array([self._row_disc(r)[0] for r in R])
        return float(self.mu.weights @ vals)

    def gradient(self, P):
        R = self._rows(P)
        if self.dim == 1:
            _, pot = _core.maxcorr_rows(R, self.y)
            span = self.y[-1] - self.y[0]
        else:
            pot = np.array([self._row_disc(r)[1] for r in R])
            span = float(np.max(np.ptp(self.nu.atoms, axis=0)))
        # +inf marks atoms outside a row's hull: an unbounded ascent direction
        finite = np.isfinite(pot)
        big = (np.max(np.abs(pot[finite])) if finite.any() else 0.0) + 40.0 * (span + 1.0)
        return np.where(finite, pot, big)

    def _row_disc(self, r):
        keep = r > 0
        res = maxcorr_disc(make_measure(self.nu.atoms[keep], r[keep]), self.g, cap=np.inf)
        # extend the potential to every atom by double conjugation through
        # psi(b) = max_y (y.b - phi(y)) on the charged atoms
        ya = self.nu.atoms[keep]
        psi = np.max(self.g.nodes @ ya.T - res.dual_potential[None, :], axis=1)
        phi = np.max(self.nu.atoms @ self.g.nodes.T - psi[None, :], axis=1)
        return res.value, phi - phi[np.argmax(keep)]


def kernel_objective(kernel, quad_order=32):
    """``sum_x mu(x) H(pi_x)`` for a given kernel."""
    return _Objective(kernel.mu, kernel.nu, quad_order).value(kernel.joint)


def _golden(f, iters):
    lo, hi = 0.0, 1.0
    a, b = hi - _GOLDEN, _GOLDEN
    fa, fb = f(a), f(b)
    for _ in range(iters):
        if fa < fb:
            lo, a, fa = a, b, fb
            b = lo + _GOLDEN * (hi - lo)
            fb = f(b)
        else:
            hi, b, fb = b, a, fa
            a = hi - _GOLDEN * (hi - lo)
            fa = f(a)
    return 0.5 * (lo + hi)


# -- solver ------------------------------------------------------------------


def _check_order(mu, nu, opts):
    if mu.dim != nu.dim:
        raise MeasureError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    ok = convex_order_1d(mu, nu, tol=opts.order_tol) if mu.dim == 1 else convex_order_lp(mu, nu)
    if not ok:
        raise ConvexOrderError("mu does not precede nu in convex order")


def _newton_joint(mu, nu, opts):
    """Exact optimiser glued from per-component dual Newton solves, or None."""
    dec = decompose(mu, nu, tol=opts.order_tol)
    kernels = []
    for comp in dec.components:
        sol = solve_dual(comp.mu_k.x, comp.mu_k.weights, comp.nu_k.x, comp.nu_k.weights)
        if not sol.converged:
            log.info("dual Newton stalled at residual %.3g; falling back to Frank-Wolfe", sol.residual)
            return None, None
        kernels.append(MartingaleKernel(comp.mu_k, comp.nu_k, kernel_rows(sol.zeta, sol.b)))
    K = glue(dec, kernels)
    return K.joint, _structural_pattern(dec)


def _structural_pattern(dec):
    """Pairs some martingale coupling charges: component blocks plus the static diagonal."""
    xm, yn = dec.mu.x, dec.nu.x
    pattern = np.zeros((xm.size, yn.size), dtype=bool)
    for comp in dec.components:
        rows = np.isin(xm, comp.mu_k.x)
        cols = np.isin(yn, comp.nu_k.x)
        pattern[np.ix_(rows, cols)] = True
    for x in dec.eta_atoms:
        pattern[np.searchsorted(xm, x), static_target(dec.nu, x)] = True
    return pattern


def _support_pattern(mu, nu, opts, poly):
    """Pairs that some martingale coupling charges, with a witness coupling if one was computed."""
    if mu.dim == 1:
        return _structural_pattern(decompose(mu, nu, tol=opts.order_tol)), None
    P, allowed = relative_interior_point(poly, mu.weights, nu.weights)
    return allowed, P


def _initial_joint(mu, nu, opts, poly, pattern, witness):
    if opts.init == "vertex":
        sub = martingale_polytope(mu.atoms, mu.weights, nu.atoms, nu.weights, pattern=pattern)
        return sub.to_matrix(solve_lp(np.zeros(sub.n_vars), sub.A, sub.b).x)
    if opts.init not in ("interior", "dual"):
        raise ValueError(f"unknown init {opts.init!r}")
    if witness is not None:
        return witness
    sub = martingale_polytope(mu.atoms, mu.weights, nu.atoms, nu.weights, pattern=pattern)
    return sub.to_matrix(sub.from_matrix(relative_interior_point(sub, mu.weights, nu.weights)[0]))


def _newton_step(P, mu_w, x, y, pattern, nu_w):
    """Primal Newton direction on the face ``P > 0``, in cumulative coordinates.

    With ``C[x, j] = P[x, 1] + ... + P[x, j]`` the objective is
    ``sum mu_x dy_j I(C[x, j] / mu_x)``, separable with diagonal Hessian,
    and the constraints read ``sum_x C[x, j] = N_j`` and
    ``sum_j dy_j C[x, j] = mu_x (y_m - x)``. Entries of ``C`` before the
    first or from the last charged atom of a row are held fixed, and an
    uncharged atom inside a row ties its cumulative entry to the previous
    one, so the step never leaves the current face. Returns None when no
    entry is free.
    """
    n, m = P.shape
    k = m - 1
    dy = np.diff(y)
    face = (P > 0) & pattern
    C = np.cumsum(P, axis=1)[:, :-1]
    first = np.argmax(face, axis=1)
    last = m - 1 - np.argmax(face[:, ::-1], axis=1)
    j = np.arange(k)
    free = (j[None, :] >= first[:, None]) & (j[None, :] < last[:, None])
    if not free.any():
        return None
    # a free entry opens a new group unless its atom is uncharged (then it copies its left neighbour)
    opens = free & (face[:, :k] | (j[None, :] == first[:, None]))
    gid = np.cumsum(opens.ravel()).reshape(n, k) - 1
    rows, cols = np.nonzero(free)
    groups = gid[rows, cols]
    G = int(groups.max()) + 1
    B = np.zeros((G, k))
    B[groups, cols] = 1.0
    g_row = np.zeros(G, dtype=int)
    g_row[groups] = rows
    g_dy = B @ dy
    # one representative cumulative value per group; ppf from whichever tail is more accurate
    rep = np.zeros(G, dtype=int)
    rep[groups[::-1]] = cols[::-1]
    c = C[g_row, rep] / mu_w[g_row]
    tail = 1.0 - c
    z = np.where(c <= 0.5, ndtri(np.clip(c, 1e-300, 0.5)), -ndtri(np.clip(tail, 1e-300, 0.5)))
    grad = -g_dy * z
    W = mu_w[g_row] * np.exp(-0.5 * z * z) * _INV_SQRT_2PI / g_dy
    R = np.zeros((G, n))
    R[np.arange(G), g_row] = 1.0
    r_col = np.cumsum(nu_w)[:-1] - C.sum(axis=0)
    r_mean = mu_w * (y[-1] - x) - C @ dy
    M = np.zeros((k + n, k + n))
    M[:k, :k] = B.T @ (W[:, None] * B)
    M[k:, k:] = np.diag(R.T @ (W * g_dy ** 2))
    M[:k, k:] = B.T @ ((W * g_dy)[:, None] * R)
    M[k:, :k] = M[:k, k:].T
    rhs = np.concatenate([B.T @ (W * grad) - r_col, R.T @ (W * grad * g_dy) - r_mean])
    lam = lstsq(M, rhs, lapack_driver="gelsd")[0]
    d_g = W * (grad - B @ lam[:k] - g_dy * lam[k:][g_row])
    delta = np.zeros((n, k))
    delta[rows, cols] = d_g[groups]
    dP = np.diff(np.concatenate([np.zeros((n, 1)), delta, np.zeros((n, 1))], axis=1), axis=1)
    return np.where(face, dP, 0.0)


def solve_wot(mu, nu, opts=None, init=None):
    """Maximise ``sum_x mu(x) H(pi_x)`` over martingale kernels from ``mu`` to ``nu``.

    Parameters
    ----------
    mu, nu : DiscreteMeasure
        Marginals in convex order, dimension 1 or 2.
    opts : WotOptions, optional
    init : MartingaleKernel, optional
        Feasible starting kernel; overrides ``opts.init``.

    Returns
    -------
    WotSolution
        ``converged`` is False when the iteration cap was hit.

    Raises
    ------
    ConvexOrderError
        If ``mu`` does not precede ``nu`` in convex order.
    InternalInconsistency
        If the order check passes but the LP finds no martingale coupling.
    """
    opts = opts or WotOptions()
    _check_order(mu, nu, opts)
    obj = _Objective(mu, nu, opts.quad_order)
    poly = martingale_polytope(mu.atoms, mu.weights, nu.atoms, nu.weights)
    P = None
    info = {}
    try:
        if init is not None:
            P = init.joint
            pattern, _ = _support_pattern(mu, nu, opts, poly)
            info["start"] = "given"
        elif opts.init == "dual" and mu.dim == 1:
            P, pattern = _newton_joint(mu, nu, opts)
            info["start"] = "dual"
        if P is None:
            pattern, witness = _support_pattern(mu, nu, opts, poly)
            P = _initial_joint(mu, nu, opts, poly, pattern, witness)
            info["start"] = "interior" if opts.init == "dual" else opts.init
    except LPInfeasible as exc:
        raise InternalInconsistency(f"convex order holds but the martingale polytope is empty: {exc}") from exc
    sub = martingale_polytope(mu.atoms, mu.weights, nu.atoms, nu.weights, pattern=pattern)
    newton = opts.accelerate == "newton" and mu.dim == 1

    value = obj.value(P)
    trace = [value]
    gap = np.inf
    it = 0
    newton_steps = 0
    converged = False
    while True:
        g = obj.gradient(P)
        try:
            S = sub.to_matrix(solve_lp(sub.from_matrix(g), sub.A, sub.b, maximize=True).x)
        except LPError as exc:
            raise InternalInconsistency(f"linear subproblem failed: {exc}") from exc
        gap = max(float(np.sum(g * (S - P))), 0.0)
        if gap <= opts.gap_tol * (1.0 + abs(value)):
            converged = True
            break
        if it >= opts.max_iter:
            break
        it += 1
        D = S - P
        step = _golden(lambda s: obj.value(P + s * D), opts.line_search_iters)
        best_P, best = P + step * D, obj.value(P + step * D)
        dP = _newton_step(P, mu.weights, mu.x, nu.x, pattern, nu.weights) if newton else None
        if dP is not None:
            # largest step keeping the support strictly positive, then backtrack
            neg = dP < 0
            t = min(1.0, 0.99 * float(np.min(-P[neg] / dP[neg]))) if neg.any() else 1.0
            for _ in range(30):
                cand = obj.value(P + t * dP)
                if cand > best:
                    best_P, best = P + t * dP, cand
                    newton_steps += 1
                    break
                t *= 0.5
        if best < value:
            # concavity guarantees a nonnegative step helps unless the gap is
            # rounding noise; keep the iterate so the trace stays monotone
            trace.append(value)
            break
        P, value = best_P, best
        trace.append(value)
    info["pattern_size"] = int(pattern.sum())
    info["quad_order"] = opts.quad_order
    info["newton_steps"] = newton_steps
    kernel = kernel_from_joint(mu, nu, P)
    return WotSolution(kernel, value, gap, it, trace, converged, info)


def solve_wot_1d_by_components(mu, nu, opts=None):
    """Solve each irreducible component separately and glue.

    ``opts.method`` picks the per-component solver: ``"fw"`` (the
    Frank-Wolfe solver), ``"bass"`` (fixed-point Bass fit followed by
    :func:`sbm.bass.kernel_from_bass`) or ``"newton"`` (dual Newton only).
    The value is the mass-weighted sum of component values.
    """
    from .bass import BassOptions, bass_fixed_point, kernel_from_bass

    opts = opts or WotOptions()
    if mu.dim != 1 or nu.dim != 1:
        raise MeasureError("component-wise solve is only defined on the line")
    _check_order(mu, nu, opts)
    dec = decompose(mu, nu, tol=opts.order_tol)
    kernels, values, gaps, iters, traces = [], [], [], 0, []
    for comp in dec.components:
        if opts.method == "fw":
            sol = solve_wot(comp.mu_k, comp.nu_k, opts)
            kernels.append(sol.kernel)
            values.append(sol.value)
            gaps.append(sol.gap)
            iters += sol.iterations
            traces.append(sol.trace)
        elif opts.method == "bass":
            model = bass_fixed_point(comp.mu_k, comp.nu_k, BassOptions())
            ker = kernel_from_bass(model)
            kernels.append(ker)
            values.append(kernel_objective(ker))
            gaps.append(np.nan)
            iters += model.iterations
            traces.append([values[-1]])
        elif opts.method == "newton":
            d = solve_dual(comp.mu_k.x, comp.mu_k.weights, comp.nu_k.x, comp.nu_k.weights)
            kernels.append(MartingaleKernel(comp.mu_k, comp.nu_k, kernel_rows(d.zeta, d.b)))
            values.append(float(comp.mu_k.weights @ row_values(d.zeta, d.b, comp.nu_k.x)))
            gaps.append(np.nan)
            iters += d.iterations
            traces.append([values[-1]])
        else:
            raise ValueError(f"unknown method {opts.method!r}")
    masses = np.array([c.mass for c in dec.components])
    value = float(masses @ np.array(values)) if values else 0.0
    gap = float(masses @ np.array(gaps)) if gaps else 0.0
    length = max((len(t) for t in traces), default=1)
    trace = [
        float(sum(m * (t[min(i, len(t) - 1)]) for m, t in zip(masses, traces)))
        for i in range(length)
    ]
    kernel = glue(dec, kernels)
    return WotSolution(
        kernel,
        value,
        gap,
        iters,
        trace,
        converged=not np.isnan(gap) and gap <= opts.gap_tol * (1 + abs(value)) if opts.method == "fw" else True,
        info={"components": len(dec.components), "method": opts.method},
    )


def wt_to_weak_gozlan(value, nu):
    """``d + E|Y|^2 - 2 value``: the minimisation form ``inf sum mu(x) W_2(pi_x, gamma)^2``."""
    return float(nu.dim + second_moment(nu) - 2.0 * value)


# -- monotonicity certificate -------------------------------------------------


def _h(eta, quad_order):
    if eta.dim == 1:
        return maxcorr_1d(eta).value
    return maxcorr_disc(eta, gaussian_disc(eta.dim, quad_order)).value


def certify_monotonicity(sol, trials=100, seed=0, opts=None, threshold=None):
    """Look for improving two-row swaps in a solved kernel.

    For each sampled pair of atoms ``(x, x')`` the two-point problem with
    marginals ``(delta_x + delta_x') / 2`` and ``(pi_x + pi_x') / 2`` is
    re-solved. The improvement is the decrease of
    ``W_2(m_x, gamma)^2 + W_2(m_x', gamma)^2``, which equals twice the
    increase of ``H(m_x) + H(m_x')`` since second moments cancel.
    The certificate passes when no pair improves by more than
    ``threshold`` (default ``1e-5 (1 + |value|)``).
    """
    opts = opts or WotOptions()
    kernel = sol.kernel if isinstance(sol, WotSolution) else sol
    value = sol.value if isinstance(sol, WotSolution) else kernel_objective(kernel, opts.quad_order)
    thr = 1e-5 * (1.0 + abs(value)) if threshold is None else threshold
    mu = kernel.mu
    n = mu.size
    rng = np.random.default_rng(seed)
    all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if len(all_pairs) <= trials:
        pairs = all_pairs
    else:
        pick = rng.choice(len(all_pairs), size=trials, replace=False)
        pairs = [all_pairs[k] for k in np.sort(pick)]
    worst, worst_pair, skipped = 0.0, None, []
    for i, j in pairs:
        ri, rj = kernel.row(i), kernel.row(j)
        before = _h(ri, opts.quad_order) + _h(rj, opts.quad_order)
        m2 = make_measure(mu.atoms[[i, j]], [0.5, 0.5])
        n2 = make_measure(np.concatenate([ri.atoms, rj.atoms]), np.concatenate([ri.weights, rj.weights]))
        try:
            two = solve_wot(m2, n2, opts)
        except (ConvexOrderError, InternalInconsistency, LPError) as exc:
            skipped.append({"pair": [int(i), int(j)], "reason": str(exc)})
            log.warning("monotonicity: skipping pair (%d, %d): %s", i, j, exc)
            continue
        improvement = 2.0 * (2.0 * two.value - before)
        if improvement > worst or worst_pair is None:
            worst, worst_pair = max(improvement, worst), (int(i), int(j))
    return CertificateReport(
        name="monotonicity",
        passed=bool(worst <= thr),
        statistic=float(worst),
        threshold=float(thr),
        seed=int(seed),
        details={"pairs": len(pairs), "worst_pair": worst_pair, "skipped": skipped},
    )


def perturb_kernel(kernel, fraction=0.1, rows=None, seed=0):
    """Swap ``fraction`` of the joint mass between two rows and re-project.

    Swapping keeps both marginals but breaks the row means; the nearest
    martingale kernel in joint L1 distance restores them. The result is a
    feasible, generally suboptimal kernel.
    """
    n = kernel.mu.size
    if n < 2:
        raise MeasureError("need at least two atoms to perturb")
    if rows is None:
        rng = np.random.default_rng(seed)
        i, j = (int(v) for v in rng.choice(n, size=2, replace=False))
    else:
        i, j = rows
    P = kernel.joint.copy()
    eps = fraction * min(kernel.mu.weights[i], kernel.mu.weights[j])
    di, dj = eps * kernel.pi[i], eps * kernel.pi[j]
    P[i] += dj - di
    P[j] += di - dj
    return project_kernel_l1(kernel_from_joint(kernel.mu, kernel.nu, P))
