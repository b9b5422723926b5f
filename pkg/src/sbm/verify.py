"""Certificates over solver outputs.

Every check returns a :class:`~sbm.report.CertificateReport`; a failed
check is reported, never raised, so suites aggregate instead of aborting.
"""

from dataclasses import replace

import numpy as np

from . import _core
from .dynamics import check_scaling, check_time_consistency
from .measures import MeasureError, wasserstein2_1d
from .report import CertificateReport
from .wot import WotOptions, certify_monotonicity, solve_wot_1d_by_components

__all__ = [
    "CertificateReport",
    "SolverFailure",
    "check_lipschitz_kernel",
    "lipschitz_excess",
    "check_martingale_kernel",
    "check_monotonicity",
    "cross_validate",
    "run_suite",
    "SUITES",
]

SUITES = ("lipschitz", "martingale", "monotonicity", "scaling", "consistency", "crossval")


class SolverFailure(RuntimeError):
    """One side of a cross-validation failed; ``side`` names it."""

    def __init__(self, side, cause):
        super().__init__(f"{side} solver failed: {cause}")
        self.side = side


def lipschitz_excess(kernel, method="auto"):
    """Matrix ``W_1(pi_x, pi_x') - |x - x'|`` over all atom pairs.

    ``method="quantile"`` integrates quantile differences pair by pair (exact
    when rows are Dirac masses); ``method="cdf"`` integrates CDF differences,
    vectorised over pairs. ``"auto"`` uses quantiles up to 200 atoms.
    """
    if kernel.mu.dim != 1:
        raise MeasureError("the Lipschitz certificate is defined on the line")
    x, y, pi = kernel.mu.x, kernel.nu.x, np.clip(kernel.pi, 0.0, None)
    n = x.size
    if method == "auto":
        method = "quantile" if n <= 200 else "cdf"
    W = np.zeros((n, n))
    if method == "quantile":
        for i in range(n):
            for j in range(i + 1, n):
                W[i, j] = W[j, i] = _core.wasserstein_1d(y, pi[i], y, pi[j], 1.0)
    elif method == "cdf":
        F = np.cumsum(pi, axis=1)[:, :-1]
        dy = np.diff(y)
        for i in range(n):
            W[i] = np.abs(F - F[i]) @ dy
    else:
        raise ValueError(f"unknown method {method!r}")
    return W - np.abs(x[:, None] - x[None, :])


def check_lipschitz_kernel(kernel, slack=1e-3, method="auto"):
    """Largest ``W_1(pi_x, pi_x') - |x - x'|``; threshold ``1e-6 + slack``."""
    E = lipschitz_excess(kernel, method)
    n = E.shape[0]
    if n < 2:
        stat, worst = 0.0, None
    else:
        iu = np.triu_indices(n, 1)
        k = int(np.argmax(E[iu]))
        stat, worst = float(E[iu][k]), (int(iu[0][k]), int(iu[1][k]))
    thr = 1e-6 + slack
    return CertificateReport("lipschitz", bool(stat <= thr), stat, thr,
                             details={"worst_pair": worst, "slack": slack, "atoms": n})


def check_martingale_kernel(kernel, rel_tol=1e-8):
    """Largest ``|mean(pi_x) - x|``; threshold ``rel_tol * max(1, max |y|)``."""
    dev = np.abs(kernel.row_means() - kernel.mu.atoms).reshape(kernel.mu.size, -1)
    stat = float(dev.max())
    scale = max(1.0, float(np.abs(kernel.nu.atoms).max()))
    thr = rel_tol * scale
    return CertificateReport("martingale", bool(stat <= thr), stat, thr,
                             details={"worst_atom": int(np.argmax(dev.max(axis=1))), "scale": scale})


def check_monotonicity(sol, trials=100, seed=0, opts=None):
    return certify_monotonicity(sol, trials=trials, seed=seed, opts=opts)


def cross_validate(mu, nu, opts=None, value_tol=1e-3, row_tol=5e-2):
    """Compare the Frank-Wolfe and Bass fixed-point solutions component by component.

    The statistic is ``max(dv / value_tol, dw / row_tol)`` against a
    threshold of 1, where ``dv = |v_fw - v_bass| / (1 + |v_fw|)`` and ``dw``
    is the largest row-wise W_2 between the two kernels; both raw numbers
    are in ``details``.
    """
    base = opts or WotOptions()
    sides = {}
    for side in ("fw", "bass"):
        try:
            sides[side] = solve_wot_1d_by_components(mu, nu, _with_method(base, side))
        except Exception as exc:
            raise SolverFailure(side, exc) from exc
    fw, bass = sides["fw"], sides["bass"]
    dv = abs(fw.value - bass.value) / (1.0 + abs(fw.value))
    kf, kb = fw.kernel, bass.kernel
    dw = max((wasserstein2_1d(kf.row(i), kb.row(i)) for i in range(mu.size)), default=0.0)
    stat = max(dv / value_tol, dw / row_tol)
    return CertificateReport(
        "crossval", bool(stat <= 1.0), float(stat), 1.0,
        details={"value_fw": fw.value, "value_bass": bass.value, "value_gap": dv,
                 "row_w2": dw, "value_tol": value_tol, "row_tol": row_tol},
    )


def _with_method(opts, method):
    return replace(opts, method=method)


def run_suite(mu, nu, suites=SUITES, opts=None, seed=0, trials=100, slack=1e-3, solution=None):
    """Run the named certificates on one instance; returns a list of reports.

    ``solution`` (a solved :class:`~sbm.wot.WotSolution`) is reused when
    given; otherwise the pair is solved once with the Frank-Wolfe method.
    """
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites {sorted(unknown)}; choose from {SUITES}")
    opts = opts or WotOptions()
    if solution is None and {"lipschitz", "martingale", "monotonicity"} & set(suites):
        solution = solve_wot_1d_by_components(mu, nu, _with_method(opts, "fw"))
    out = []
    for name in suites:
        if name == "lipschitz":
            out.append(check_lipschitz_kernel(solution.kernel, slack))
        elif name == "martingale":
            out.append(check_martingale_kernel(solution.kernel))
        elif name == "monotonicity":
            out.append(check_monotonicity(solution, trials, seed, opts))
        elif name == "scaling":
            reps = [check_scaling(mu, nu, r, t, gap_tol=opts.gap_tol) for r, t in ((0.0, 0.25), (0.0, 1.0), (0.25, 1.0))]
            worst = max(reps, key=lambda r: r.relative_error)
            out.append(CertificateReport("scaling", all(r.passed for r in reps), worst.relative_error, worst.threshold,
                                         details={"checks": [r.to_dict() for r in reps]}))
        elif name == "consistency":
            reps = [check_time_consistency(mu, nu, 0.0, 1.0, lam) for lam in (0.25, 0.5, 0.75)]
            worst = max(reps, key=lambda r: r.w2_gap)
            out.append(CertificateReport("consistency", all(r.passed for r in reps), worst.w2_gap, worst.threshold,
                                         details={"checks": [r.to_dict() for r in reps]}))
        elif name == "crossval":
            out.append(cross_validate(mu, nu, opts))
    return out
