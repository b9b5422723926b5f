"""Linear programming backend and martingale-coupling polytopes.

All LPs in the package go through :func:`solve_lp`, which wraps the HiGHS
solver shipped with scipy. Swapping the backend means replacing that one
function.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog


# tighter than the HiGHS defaults (1e-7): duality gaps are read off these LPs
HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


class LPError(RuntimeError):
    """The LP solver failed for a reason other than infeasibility."""


class LPInfeasible(LPError):
    """The LP has no feasible point."""


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    value: float
    eq_duals: np.ndarray


def solve_lp(c, A_eq, b_eq, upper=None, maximize=False, A_ub=None, b_ub=None, presolve=True):
    """Solve ``min/max c.x`` subject to ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``0 <= x <= upper``.

    Returns the primal solution, objective value (in the caller's sense)
    and the equality duals, i.e. the sensitivity of the optimal value to
    ``b_eq``. ``presolve=False`` helps with badly scaled data such as
    Gauss-Hermite weights far below machine epsilon.

    Raises
    ------
    LPInfeasible
        If the constraints admit no solution.
    LPError
        On any other solver failure (unbounded, iteration limit, ...).
    """
    c = np.asarray(c, dtype=float)
    sign = -1.0 if maximize else 1.0
    bounds = (0, None) if upper is None else [(0, u) for u in np.broadcast_to(upper, c.shape)]
    res = linprog(
        sign * c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs",
        options={**HIGHS_OPTIONS, "presolve": bool(presolve)},
    )
    if res.status == 2:
        raise LPInfeasible(res.message)
    if res.status != 0:
        raise LPError(f"LP solver failed (status {res.status}): {res.message}")
    duals = sign * np.asarray(res.eqlin.marginals) if A_eq is not None else np.zeros(0)
    return LPResult(x=res.x, value=sign * res.fun, eq_duals=duals)


@dataclass(frozen=True)
class MartingalePolytope:
    """Equality system of martingale couplings restricted to a support pattern.

    Variables are the joint masses ``P[x, y]`` on the pairs listed in
    ``rows``/``cols`` (flat order). Constraints: row sums equal ``mu``,
    column sums equal ``nu``, and ``sum_y P[x, y] (y - x) = 0`` per row
    and coordinate.
    """

    rows: np.ndarray
    cols: np.ndarray
    shape: tuple
    A: sparse.csr_matrix
    b: np.ndarray

    @property
    def n_vars(self):
        return self.rows.size

    def to_matrix(self, v):
        P = np.zeros(self.shape)
        P[self.rows, self.cols] = v
        return P

    def from_matrix(self, P):
        return np.asarray(P)[self.rows, self.cols]


def martingale_polytope(x, mu_w, y, nu_w, pattern=None):
    """Build the martingale polytope between atoms ``x`` (n, d) and ``y`` (m, d).

    ``pattern`` is an optional boolean (n, m) mask of pairs allowed to
    carry mass; all other pairs are fixed at zero.
    """
    x = np.asarray(x, dtype=float).reshape(len(mu_w), -1)
    y = np.asarray(y, dtype=float).reshape(len(nu_w), -1)
    n, m = len(mu_w), len(nu_w)
    if pattern is None:
        pattern = np.ones((n, m), dtype=bool)
    rows, cols = np.nonzero(pattern)
    k = rows.size
    idx = np.arange(k)
    blocks = [
        sparse.csr_matrix((np.ones(k), (rows, idx)), shape=(n, k)),
        sparse.csr_matrix((np.ones(k), (cols, idx)), shape=(m, k)),
    ]
    for d in range(x.shape[1]):
        blocks.append(sparse.csr_matrix((y[cols, d] - x[rows, d], (rows, idx)), shape=(n, k)))
    A = sparse.vstack(blocks).tocsr()
    b = np.concatenate([mu_w, nu_w, np.zeros(n * x.shape[1])])
    return MartingalePolytope(rows=rows, cols=cols, shape=(n, m), A=A, b=b)


def relative_interior_point(poly, mu_w, nu_w, max_rounds=50, zero_tol=1e-12):
    """Find a coupling that charges every pair any martingale coupling can charge.

    Returns ``(P, allowed)`` where ``allowed`` marks the pairs that are
    positive in some feasible coupling; every such pair is positive in
    ``P``. Pairs outside ``allowed`` are zero for every feasible coupling.

    Raises
    ------
    LPInfeasible
        If the polytope is empty.
    """
    caps = mu_w[poly.rows] * nu_w[poly.cols]
    k = poly.n_vars
    base = solve_lp(np.zeros(k), poly.A, poly.b)
    found = [base.x]
    charged = base.x > zero_tol
    for _ in range(max_rounds):
        todo = ~charged
        if not todo.any():
            break
        # max sum of min(P, cap) over still-uncharged pairs
        t = int(todo.sum())
        sel = np.flatnonzero(todo)
        A_eq = sparse.hstack([poly.A, sparse.csr_matrix((poly.A.shape[0], t))]).tocsr()
        A_ub = sparse.csr_matrix(
            (np.r_[np.ones(t), -np.ones(t)], (np.r_[np.arange(t), np.arange(t)], np.r_[k + np.arange(t), sel])),
            shape=(t, k + t),
        )
        c = np.r_[np.zeros(k), np.ones(t)]
        upper = np.r_[np.full(k, np.inf), caps[sel]]
        res = solve_lp(c, A_eq, poly.b, upper=upper, maximize=True, A_ub=A_ub, b_ub=np.zeros(t))
        if res.value <= zero_tol:
            break
        P = res.x[:k]
        found.append(P)
        charged |= P > zero_tol
    allowed_flat = charged
    # push mass into every allowed pair: maximise the smallest relative charge
    sel = np.flatnonzero(allowed_flat)
    fixed = np.flatnonzero(~allowed_flat)
    A_eq = sparse.hstack([poly.A, sparse.csr_matrix((poly.A.shape[0], 1))]).tocsr()
    A_ub = sparse.csr_matrix(
        (np.r_[-np.ones(sel.size), caps[sel]], (np.r_[np.arange(sel.size), np.arange(sel.size)], np.r_[sel, np.full(sel.size, k)])),
        shape=(sel.size, k + 1),
    )
    upper = np.full(k + 1, np.inf)
    upper[fixed] = 0.0
    c = np.zeros(k + 1)
    c[k] = 1.0
    try:
        res = solve_lp(c, A_eq, poly.b, upper=upper, maximize=True, A_ub=A_ub, b_ub=np.zeros(sel.size))
        P = res.x[:k]
        if res.x[k] <= zero_tol:
            P = np.mean(found, axis=0)
    except LPError:
        P = np.mean(found, axis=0)
    P = np.where(allowed_flat, np.maximum(P, 0.0), 0.0)
    return poly.to_matrix(P), poly.to_matrix(allowed_flat.astype(float)) > 0
