"""Martingale transition kernels between two discrete marginals."""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, lstsq

from .lp import martingale_polytope, solve_lp
from .measures import DiscreteMeasure, make_measure, measure_from_dict, measure_to_dict

__all__ = [
    "MartingaleKernel",
    "KernelError",
    "kernel_from_joint",
    "identity_kernel",
    "project_kernel",
    "project_kernel_l1",
]


class KernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MartingaleKernel:
    """Conditional laws ``pi[i, j] = P(Y = nu.atoms[j] | X = mu.atoms[i])``."""

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    pi: np.ndarray

    def __post_init__(self):
        if self.pi.shape != (self.mu.size, self.nu.size):
            raise KernelError(f"kernel shape {self.pi.shape} does not match marginals {(self.mu.size, self.nu.size)}")

    @property
    def joint(self):
        return self.mu.weights[:, None] * self.pi

    def row(self, i):
        w = self.pi[i]
        keep = w > 0
        return make_measure(self.nu.atoms[keep], w[keep])

    def row_means(self):
        return self.pi @ self.nu.atoms

    def second_marginal(self):
        return self.mu.weights @ self.pi

    def violations(self):
        """Largest row-sum, row-mean and second-marginal errors."""
        rows = float(np.max(np.abs(self.pi.sum(axis=1) - 1.0)))
        means = float(np.max(np.abs(self.row_means() - self.mu.atoms)))
        marg = float(np.max(np.abs(self.second_marginal() - self.nu.weights)))
        return rows, means, marg

    def is_feasible(self, row_tol=1e-10, mean_tol=1e-8, marginal_tol=1e-8):
        rows, means, marg = self.violations()
        return bool(np.all(self.pi >= -1e-15) and rows <= row_tol and means <= mean_tol and marg <= marginal_tol)

    def to_dict(self):
        i, j = np.nonzero(self.pi)
        return {
            "mu": measure_to_dict(self.mu),
            "nu": measure_to_dict(self.nu),
            "kernel": [[int(a), int(b), float(self.pi[a, b])] for a, b in zip(i, j)],
        }

    @classmethod
    def from_dict(cls, d):
        mu = measure_from_dict(d["mu"])
        nu = measure_from_dict(d["nu"])
        pi = np.zeros((mu.size, nu.size))
        for a, b, v in d["kernel"]:
            pi[int(a), int(b)] = float(v)
        return cls(mu, nu, pi)


def kernel_from_joint(mu, nu, P):
    """Conditional kernel of a joint mass matrix with first marginal ``mu``."""
    P = np.clip(np.asarray(P, dtype=float), 0.0, None)
    pi = P / mu.weights[:, None]
    pi /= pi.sum(axis=1, keepdims=True)
    return MartingaleKernel(mu, nu, pi)


def identity_kernel(mu):
    return MartingaleKernel(mu, mu, np.eye(mu.size))


def _constraint_residual(mu, nu, P):
    x = mu.atoms
    y = nu.atoms
    r_rows = mu.weights - P.sum(axis=1)
    r_cols = nu.weights - P.sum(axis=0)
    r_mean = -(P @ y - P.sum(axis=1)[:, None] * x)
    return np.concatenate([r_rows, r_cols, r_mean.ravel()])


def project_kernel(kernel, max_rounds=5, tol=1e-14):
    """Make a nearly feasible kernel exactly feasible by a multiplicative correction.

    The joint ``P`` is updated as ``P * (1 + A^T lam)``, the minimum-norm
    change in the metric weighted by ``P``; this keeps the support and, for
    small residuals, positivity. Falls back to :func:`project_kernel_l1` if
    an entry would turn negative.
    """
    mu, nu = kernel.mu, kernel.nu
    P = kernel.joint.copy()
    poly = martingale_polytope(mu.atoms, mu.weights, nu.atoms, nu.weights, pattern=P > 0)
    A = poly.A
    for _ in range(max_rounds):
        r = _constraint_residual(mu, nu, P)
        if np.max(np.abs(r)) <= tol:
            break
        p = poly.from_matrix(P)
        AW = A.multiply(p[None, :]).tocsr()
        M = (AW @ A.T).toarray()
        try:
            lam = lstsq(M, r, lapack_driver="gelsy")[0]
        except (LinAlgError, ValueError):
            return project_kernel_l1(kernel)
        p_new = p + AW.T @ lam
        if np.any(p_new < 0):
            return project_kernel_l1(kernel)
        P = poly.to_matrix(p_new)
    return kernel_from_joint(mu, nu, P)


def project_kernel_l1(kernel, pattern=None):
    """Closest martingale kernel to ``kernel`` in the L1 distance of joints (LP)."""
    mu, nu = kernel.mu, kernel.nu
    poly = martingale_polytope(mu.atoms, mu.weights, nu.atoms, nu.weights, pattern=pattern)
    P0 = poly.from_matrix(kernel.joint)
    k = poly.n_vars
    eye = sparse.eye(k, format="csr")
    A_eq = sparse.hstack([poly.A, sparse.csr_matrix((poly.A.shape[0], k))]).tocsr()
    A_ub = sparse.vstack([sparse.hstack([eye, -eye]), sparse.hstack([-eye, -eye])]).tocsr()
    res = solve_lp(np.r_[np.zeros(k), np.ones(k)], A_eq, poly.b, A_ub=A_ub, b_ub=np.r_[P0, -P0])
    return kernel_from_joint(mu, nu, poly.to_matrix(res.x[:k]))
