"""Reference marginal pairs used by the tests, benchmarks and the CLI."""

import numpy as np

from .measures import gaussian_quantization, make_measure

__all__ = ["two_component_pair", "gaussian_pair", "random_convex_pair", "dirac_two_point", "gaussian_peacock"]


def two_component_pair():
    """Two irreducible components separated by a gap around 0.

    ``mu = (delta_{-5/2} + delta_{5/2}) / 2`` and ``nu`` uniform on
    ``{-4, ..., -1} U {1, ..., 4}``.
    """
    mu = make_measure([-2.5, 2.5])
    nu = make_measure([-4, -3, -2, -1, 1, 2, 3, 4])
    return mu, nu


def dirac_two_point():
    return make_measure([0.0]), make_measure([-1.0, 1.0])


def gaussian_pair(n=50, m=200, sigma=1.0, tau=2.0):
    """Quantizations of N(0, sigma^2) and N(0, tau^2)."""
    return gaussian_quantization(n, sigma), gaussian_quantization(m, tau)


def random_convex_pair(n=6, m=10, seed=0, spread=3.0):
    """Random pair in convex order built from a random kernel.

    ``nu`` has ``m`` atoms; ``mu`` puts weight ``w_i`` on the barycentre
    of row ``i`` of a random stochastic matrix.
    """
    rng = np.random.default_rng(seed)
    y = np.sort(rng.uniform(-spread, spread, m))
    K = rng.dirichlet(np.full(m, 0.5), size=n)
    w = rng.dirichlet(np.ones(n))
    return make_measure(K @ y, w), make_measure(y, w @ K)


def gaussian_peacock(times, n=40, base=0.25):
    """``[(t, law N(0, base + t))]`` as quantizations with increasing support."""
    return [(float(t), gaussian_quantization(n, np.sqrt(base + t))) for t in times]
