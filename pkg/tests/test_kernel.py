import numpy as np
import pytest

from sbm.instances import random_convex_pair
from sbm.kernel import (
    KernelError,
    MartingaleKernel,
    identity_kernel,
    kernel_from_joint,
    project_kernel,
    project_kernel_l1,
)
from sbm.measures import make_measure
from sbm.wot import solve_wot


class TestMartingaleKernel:
    def test_shape_checked(self):
        with pytest.raises(KernelError):
            MartingaleKernel(make_measure([0.0]), make_measure([-1, 1]), np.ones((2, 2)))

    def test_identity_feasible(self):
        K = identity_kernel(make_measure([0, 1, 5], [1, 2, 3]))
        assert K.is_feasible()
        assert K.violations() == (0.0, 0.0, 0.0)

    def test_row_drops_zero_weights(self):
        K = MartingaleKernel(make_measure([0.0]), make_measure([-1, 0, 1]), np.array([[0.5, 0.0, 0.5]]))
        assert K.row(0).size == 2

    def test_mean_violation_detected(self):
        K = MartingaleKernel(make_measure([0.0]), make_measure([-1, 1]), np.array([[0.4, 0.6]]))
        assert K.violations()[1] == pytest.approx(0.2)
        assert not K.is_feasible()

    def test_dict_round_trip(self):
        mu, nu = random_convex_pair(4, 6, 1)
        K = solve_wot(mu, nu).kernel
        back = MartingaleKernel.from_dict(K.to_dict())
        np.testing.assert_array_equal(back.pi, K.pi)


class TestProjection:
    @pytest.mark.parametrize("seed", range(5))
    def test_small_noise_projected_exactly(self, seed):
        mu, nu = random_convex_pair(5, 8, seed)
        K = solve_wot(mu, nu).kernel
        rng = np.random.default_rng(seed)
        noisy = kernel_from_joint(mu, nu, K.joint * (1 + 1e-6 * rng.normal(size=K.pi.shape)))
        fixed = project_kernel(noisy)
        assert fixed.is_feasible(mean_tol=1e-12, marginal_tol=1e-12)
        assert np.all((fixed.pi > 0) <= (K.pi > 0))
        assert np.abs(fixed.pi - K.pi).max() < 1e-4

    def test_l1_projection_feasible(self):
        mu, nu = random_convex_pair(4, 6, 2)
        K = solve_wot(mu, nu).kernel
        P = K.joint.copy()
        P[[0, 1]] = P[[1, 0]]
        fixed = project_kernel_l1(kernel_from_joint(mu, nu, P * (mu.weights / P.sum(axis=1))[:, None]))
        assert fixed.is_feasible()
