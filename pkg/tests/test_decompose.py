import numpy as np
import pytest

from sbm.decompose import ConvexOrderError, decompose, glue
from sbm.instances import random_convex_pair, two_component_pair
from sbm.kernel import KernelError, MartingaleKernel, identity_kernel
from sbm.measures import convex_order_1d, dirac, make_measure, mean, potential
from sbm.wot import solve_wot


def _reassemble(dec):
    """Atomwise ``eta + sum_k mass_k mu_k`` and the same for ``nu``."""
    mu_w = dict(zip(dec.eta_atoms, dec.eta_weights))
    nu_w = dict(mu_w)
    for c in dec.components:
        for x, w in zip(c.mu_k.x, c.mu_k.weights):
            mu_w[x] = mu_w.get(x, 0.0) + c.mass * w
        for y, w in zip(c.nu_k.x, c.nu_k.weights):
            nu_w[y] = nu_w.get(y, 0.0) + c.mass * w
    return mu_w, nu_w


class TestDecompose:
    def test_two_components(self):
        mu, nu = two_component_pair()
        dec = decompose(mu, nu)
        assert len(dec.components) == 2
        lo, hi = sorted(c.interval for c in dec.components)
        assert lo[1] <= 0 <= hi[0]

    def test_identical_marginals(self):
        mu = make_measure([-1, 0, 2], [1, 2, 1])
        dec = decompose(mu, mu)
        assert dec.components == [] and dec.eta_mass == pytest.approx(1.0)

    def test_dirac_to_two_point(self):
        dec = decompose(dirac(0.0), make_measure([-1, 1]))
        assert len(dec.components) == 1
        assert dec.components[0].interval == (-1.0, 1.0)
        assert dec.eta_mass == 0.0

    def test_gap_positive_exactly_inside(self):
        mu, nu = dirac(0.0), make_measure([-1, 1])
        gap = potential(nu)(np.linspace(-2, 2, 81)) - potential(mu)(np.linspace(-2, 2, 81))
        inside = np.abs(np.linspace(-2, 2, 81)) < 1
        assert np.all(gap[inside] > 0) and np.allclose(gap[~inside], 0)

    def test_not_in_order(self):
        with pytest.raises(ConvexOrderError):
            decompose(make_measure([-1, 1]), dirac(0.0))

    @pytest.mark.parametrize("seed", range(15))
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        # glue several random pairs side by side plus shared static atoms
        parts_mu, parts_nu = [], []
        for k in range(int(rng.integers(1, 4))):
            mu, nu = random_convex_pair(int(rng.integers(1, 5)), int(rng.integers(2, 7)), seed * 10 + k, spread=1.0)
            parts_mu.append((mu.x + 5 * k, mu.weights))
            parts_nu.append((nu.x + 5 * k, nu.weights))
        static = 5 * len(parts_mu) + np.arange(2.0)
        mu = make_measure(np.concatenate([p[0] for p in parts_mu] + [static]),
                          np.concatenate([p[1] for p in parts_mu] + [np.full(2, 0.3)]))
        nu = make_measure(np.concatenate([p[0] for p in parts_nu] + [static]),
                          np.concatenate([p[1] for p in parts_nu] + [np.full(2, 0.3)]))
        dec = decompose(mu, nu)
        mass = sum(c.mass for c in dec.components) + dec.eta_mass
        assert mass == pytest.approx(1.0, abs=1e-12)
        for c in dec.components:
            assert convex_order_1d(c.mu_k, c.nu_k)
            assert abs(mean(c.mu_k) - mean(c.nu_k)) <= 1e-9
            assert np.all((c.nu_k.x >= c.interval[0]) & (c.nu_k.x <= c.interval[1]))
        ivs = sorted(c.interval for c in dec.components)
        assert all(a[1] <= b[0] for a, b in zip(ivs, ivs[1:]))
        mu_w, nu_w = _reassemble(dec)
        for x, w in zip(mu.x, mu.weights):
            assert mu_w.get(x, 0.0) == pytest.approx(w, abs=1e-10)
        for y, w in zip(nu.x, nu.weights):
            assert nu_w.get(y, 0.0) == pytest.approx(w, abs=1e-10)

    def test_round_trip(self):
        mu, nu = two_component_pair()
        dec = decompose(mu, nu)
        back = type(dec).from_dict(dec.to_dict(), mu, nu)
        assert [c.interval for c in back.components] == [c.interval for c in dec.components]


class TestGlue:
    def test_single_component(self):
        mu, nu = dirac(0.0), make_measure([-1, 1])
        dec = decompose(mu, nu)
        k = MartingaleKernel(dec.components[0].mu_k, dec.components[0].nu_k, np.array([[0.5, 0.5]]))
        np.testing.assert_array_equal(glue(dec, [k]).pi, k.pi)

    def test_no_components(self):
        mu = make_measure([0, 1, 3])
        K = glue(decompose(mu, mu), [])
        np.testing.assert_array_equal(K.pi, identity_kernel(mu).pi)

    def test_two_components_never_cross_zero(self):
        mu, nu = two_component_pair()
        dec = decompose(mu, nu)
        kernels = [solve_wot(c.mu_k, c.nu_k).kernel for c in dec.components]
        K = glue(dec, kernels)
        assert K.is_feasible()
        sign = np.sign(mu.x)[:, None] * np.sign(nu.x)[None, :]
        assert np.all(K.pi[sign < 0] == 0)

    def test_count_mismatch(self):
        mu, nu = two_component_pair()
        with pytest.raises(KernelError):
            glue(decompose(mu, nu), [])
