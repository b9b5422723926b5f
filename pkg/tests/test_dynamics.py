import csv
import json

import numpy as np
import pytest
from scipy import stats

import oracles
from sbm.bass import BassModel, MonotoneMap
from sbm.dynamics import (
    PathEnsemble,
    check_scaling,
    check_time_consistency,
    ensemble_to_json,
    fit_sbm,
    flow_measure,
    interpolate,
    localvol_chain,
    parse_grid,
    simulate,
)
from sbm.instances import dirac_two_point, gaussian_pair, gaussian_peacock, random_convex_pair, two_component_pair
from sbm.decompose import ConvexOrderError
from sbm.measures import MeasureError, convex_order_1d, make_measure, wasserstein1_1d, wasserstein2_1d

GRID = np.linspace(0.0, 1.0, 65)


@pytest.fixture(scope="module")
def dirac_model():
    return fit_sbm(*dirac_two_point())


@pytest.fixture(scope="module")
def gauss_model():
    return fit_sbm(*gaussian_pair(50, 400, 1.0, np.sqrt(2.0)))


@pytest.fixture(scope="module")
def gauss_paths(gauss_model):
    return simulate(gauss_model, GRID, 20000, seed=11)


def _identity_model():
    mu = make_measure([0.0])
    return BassModel(mu, mu, np.zeros(1), MonotoneMap.identity(), 0.0)


class TestParseGrid:
    def test_count(self):
        np.testing.assert_allclose(parse_grid("0:1:5"), [0, 0.25, 0.5, 0.75, 1])

    def test_single_point(self):
        np.testing.assert_array_equal(parse_grid("0.5:0.5:1"), [0.5])

    @pytest.mark.parametrize("bad", ["0:1", "a:b:3", "0:1:0", "1:0:4", "0:2:4"])
    def test_rejects(self, bad):
        with pytest.raises(MeasureError):
            parse_grid(bad)


class TestSimulate:
    def test_identity_map_gives_brownian_paths(self):
        ens = simulate(_identity_model(), GRID, 4000, seed=1)
        qv = np.sum(np.diff(ens.paths, axis=1) ** 2, axis=1)
        # each path's quadratic variation over [0, 1] is 1 up to chi-square noise
        assert abs(qv.mean() - 1.0) <= 3 * qv.std() / np.sqrt(qv.size)
        assert np.all(np.abs(qv - 1.0) <= 6 * np.sqrt(2.0 / 64))
        np.testing.assert_array_equal(ens.paths[:, 0], 0.0)

    def test_dirac_terminal_law(self, dirac_model):
        ens = simulate(dirac_model, [0.0, 1.0], 10 ** 5, seed=2)
        assert wasserstein1_1d(ens.marginal(1), dirac_model.nu) <= 1e-2
        np.testing.assert_array_equal(np.unique(ens.paths[:, 1]), [-1.0, 1.0])

    def test_two_components_never_cross(self):
        mu, nu = two_component_pair()
        model = fit_sbm(mu, nu)
        assert model.component_count == 2
        ens = simulate(model, GRID, 20000, seed=3)
        pos = ens.paths[:, 0] > 0
        assert np.all(ens.paths[pos] > 0) and np.all(ens.paths[~pos] < 0)
        assert np.all(np.abs(ens.paths) >= 1.0 - 1e-12)

    def test_start_law_matches_mu(self, gauss_model, gauss_paths):
        N = gauss_paths.size
        assert wasserstein2_1d(gauss_paths.marginal(0), gauss_model.mu) <= 5.0 / np.sqrt(N)
        assert set(np.unique(gauss_paths.paths[:, 0])) <= set(gauss_model.mu.x)

    def test_paths_stay_in_hull(self, gauss_model, gauss_paths):
        y = gauss_model.nu.x
        assert gauss_paths.paths.min() >= y[0] and gauss_paths.paths.max() <= y[-1]

    def test_thread_invariance(self, dirac_model):
        a = simulate(dirac_model, GRID, 20000, seed=4, threads=1)
        b = simulate(dirac_model, GRID, 20000, seed=4, threads=4)
        np.testing.assert_array_equal(a.paths, b.paths)

    def test_seed_changes_paths(self, dirac_model):
        a = simulate(dirac_model, GRID, 100, seed=5)
        b = simulate(dirac_model, GRID, 100, seed=6)
        assert not np.array_equal(a.paths, b.paths)
        assert a.summary()["seed"] == 5

    def test_static_atoms_stay_put(self):
        mu = make_measure([-2.0, 0.0, 2.0], [0.25, 0.5, 0.25])
        nu = make_measure([-2.0, -1.0, 1.0, 2.0], [0.25, 0.25, 0.25, 0.25])
        ens = simulate(fit_sbm(mu, nu), GRID, 2000, seed=7)
        side = np.abs(ens.paths[:, 0]) == 2.0
        assert side.any()
        assert np.all(ens.paths[side] == ens.paths[side][:, :1])

    @pytest.mark.parametrize("times", [[0.5, 0.2], [-0.1, 0.5], [0.0, 1.5], []])
    def test_bad_grid(self, dirac_model, times):
        with pytest.raises(MeasureError):
            simulate(dirac_model, times, 10)

    def test_unfitted(self):
        with pytest.raises(TypeError):
            simulate(object(), GRID, 10)

    def test_zero_paths(self, dirac_model):
        with pytest.raises(ValueError):
            simulate(dirac_model, GRID, 0)


class TestMartingaleAndMarkov:
    def test_binned_martingale(self, gauss_paths):
        p = gauss_paths.paths
        for s, t in ((0, 16), (16, 48), (32, 64), (0, 64)):
            edges = np.quantile(p[:, s], np.linspace(0, 1, 21))
            idx = np.clip(np.searchsorted(edges, p[:, s], side="right") - 1, 0, 19)
            for k in range(20):
                d = p[idx == k, t] - p[idx == k, s]
                if d.size < 2 or d.std() == 0:
                    continue
                assert abs(d.mean()) <= 3 * d.std() / np.sqrt(d.size) + 1e-12

    def test_marginals_match_quadrature(self, gauss_model, gauss_paths):
        for k in (16, 32, 64):
            q = flow_measure(gauss_model, GRID[k], 32)
            assert wasserstein2_1d(gauss_paths.marginal(k), q) <= 5.0 / np.sqrt(gauss_paths.size) + 1e-2

    def test_markov(self):
        mu, nu = gaussian_pair(20, 200, 0.5, np.sqrt(1.25))
        ens = simulate(fit_sbm(mu, nu), [0.0, 0.5, 1.0], 60000, seed=8)
        m0, mh, m1 = ens.paths.T
        cells = m0 > np.median(m0)
        edges = np.quantile(mh, np.linspace(0, 1, 11))
        idx = np.clip(np.searchsorted(edges, mh, side="right") - 1, 0, 9)
        for k in range(2, 8):
            a, b = m1[(idx == k) & cells], m1[(idx == k) & ~cells]
            if min(a.size, b.size) < 200:
                continue
            w1 = wasserstein1_1d(make_measure(a), make_measure(b))
            # the bin width bounds the dependence on M_1/2 within the bin
            width = edges[k + 1] - edges[k]
            noise = 3 * np.std(m1[idx == k]) * np.sqrt(1 / a.size + 1 / b.size)
            assert w1 <= noise + width


class TestInterpolate:
    def test_endpoints(self, gauss_model):
        curve = interpolate(gauss_model, [0.0, 1.0])
        mu, nu = gauss_model.mu, gauss_model.nu
        np.testing.assert_allclose(curve.measures[0].x, mu.x)
        np.testing.assert_allclose(curve.measures[0].weights, mu.weights)
        assert wasserstein2_1d(curve.measures[1], nu) <= 1e-6

    @pytest.mark.parametrize("t", [0.0, 0.25, 0.5, 0.75, 1.0])
    def test_gaussian_curve(self, t):
        model = fit_sbm(*gaussian_pair(100, 1000, 1.0, np.sqrt(2.0)))
        m = flow_measure(model, t, 32)
        assert oracles.w2_to_normal(m.x, m.weights, 0.0, np.sqrt(1.0 + t)) <= 5e-2

    def test_moments_along_curve(self, gauss_model):
        curve = interpolate(gauss_model, np.linspace(0, 1, 9))
        np.testing.assert_allclose(curve.means(), 0.0, atol=1e-9)
        assert np.all(np.diff(curve.second_moments()) >= -1e-9)

    def test_convex_order_along_curve(self):
        mu, nu = random_convex_pair(5, 9, seed=3)
        model = fit_sbm(mu, nu)
        ms = [flow_measure(model, t, 16) for t in np.linspace(0, 1, 6)]
        for a, b in zip(ms, ms[1:]):
            assert convex_order_1d(a, b, tol=1e-6)

    def test_montecarlo_curve(self, dirac_model):
        curve = interpolate(dirac_model, [0.0, 0.5, 1.0], method="montecarlo", N=20000, seed=9)
        assert curve.seed == 9
        ref = flow_measure(dirac_model, 0.5, 64)
        assert wasserstein2_1d(curve.measures[1], ref) <= 5e-2
        d = curve.to_dict()
        assert d["method"] == "montecarlo" and len(d["measures"]) == 3

    def test_unknown_method(self, dirac_model):
        with pytest.raises(ValueError):
            interpolate(dirac_model, [0.5], method="spline")


class TestScaling:
    def test_full_interval(self):
        mu, nu = random_convex_pair(4, 8, seed=1)
        rep = check_scaling(mu, nu, 0.0, 1.0, gap_tol=1e-6)
        assert rep.relative_error <= 2e-6 and rep.passed

    def test_dirac_quarter(self):
        rep = check_scaling(*dirac_two_point(), 0.0, 0.25)
        assert rep.sub_value / rep.full_value == pytest.approx(0.5, abs=3e-2)
        assert rep.squared_form_rhs == pytest.approx(0.25 * rep.full_value ** 2)

    def test_degenerate(self):
        mu = make_measure([-1.0, 2.0], [2, 1])
        rep = check_scaling(mu, mu, 0.0, 0.5)
        assert rep.full_value == pytest.approx(0.0, abs=1e-12)
        assert rep.sub_value == pytest.approx(0.0, abs=1e-12)
        assert rep.passed

    @pytest.mark.parametrize("r,t", [(0.0, 0.25), (0.25, 0.75), (0.5, 1.0)])
    def test_gaussian(self, r, t):
        rep = check_scaling(*gaussian_pair(20, 60, 1.0, np.sqrt(2.0)), r, t)
        assert rep.passed, rep

    def test_bad_times(self):
        with pytest.raises(ValueError):
            check_scaling(*dirac_two_point(), 0.5, 0.5)


class TestConsistency:
    @pytest.mark.parametrize("lam", [0.0, 1.0])
    def test_endpoints_exact(self, lam):
        rep = check_time_consistency(*random_convex_pair(4, 8, seed=2), 0.25, 0.75, lam)
        assert rep.w2_gap == 0.0

    def test_dirac_half(self):
        rep = check_time_consistency(*dirac_two_point(), 0.0, 1.0, 0.5)
        assert rep.w2_gap <= 5e-2

    @pytest.mark.parametrize("lam", [0.25, 0.5, 0.75])
    def test_random(self, lam):
        rep = check_time_consistency(*random_convex_pair(4, 8, seed=5), 0.25, 0.75, lam)
        assert rep.passed, rep

    def test_bad_args(self):
        with pytest.raises(ValueError):
            check_time_consistency(*dirac_two_point(), 0.0, 1.0, 1.5)


class TestLocalVol:
    def test_gaussian_peacock(self):
        times = np.linspace(0.0, 1.0, 5)
        peacock = gaussian_peacock(times, n=40, base=0.25)
        chain, ens = localvol_chain(peacock, 4, steps=16, N=20000, seed=10)
        np.testing.assert_allclose(chain.times, times)
        for k, t in enumerate(times):
            j = int(np.argmin(np.abs(ens.times - t)))
            assert wasserstein2_1d(ens.marginal(j), peacock[k][1]) <= 5e-2
        for a, b in zip(times, times[1:]):
            sel = (ens.times >= a - 1e-12) & (ens.times <= b + 1e-12)
            qv = np.sum(np.diff(ens.paths[:, sel], axis=1) ** 2, axis=1)
            assert qv.mean() == pytest.approx(b - a, rel=0.1)

    def test_constant_peacock(self):
        mu = make_measure([-1.0, 0.5, 3.0], [1, 2, 1])
        _, ens = localvol_chain([(0.0, mu), (0.5, mu), (1.0, mu)], 2, steps=8, N=500, seed=0)
        assert np.all(ens.paths == ens.paths[:, :1])

    def test_single_piece_is_simulate(self):
        mu, nu = dirac_two_point()
        _, ens = localvol_chain([(0.0, mu), (1.0, nu)], 1, steps=16, N=3000, seed=12)
        ref = simulate(fit_sbm(mu, nu), np.linspace(0, 1, 17), 3000, seed=12)
        np.testing.assert_array_equal(ens.paths, ref.paths)

    def test_not_increasing(self):
        mu, nu = dirac_two_point()
        with pytest.raises(ConvexOrderError):
            localvol_chain([(0.0, nu), (1.0, mu)], 1)

    def test_pieces_must_divide(self):
        peacock = gaussian_peacock([0.0, 0.5, 1.0], n=10)
        with pytest.raises(MeasureError):
            localvol_chain(peacock, 3)


class TestExport:
    def test_csv(self, dirac_model, tmp_path):
        ens = simulate(dirac_model, [0.0, 0.5, 1.0], 5, seed=0)
        ens.to_csv(tmp_path / "p.csv")
        with open(tmp_path / "p.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["path_id", "t", "value"]
        assert len(rows) == 1 + 15
        vals = np.array([float(r[2]) for r in rows[1:]]).reshape(5, 3)
        np.testing.assert_array_equal(vals, ens.paths)

    def test_json(self, dirac_model):
        ens = simulate(dirac_model, [0.0, 1.0], 50, seed=3)
        d = json.loads(ensemble_to_json(ens))
        assert d["seed"] == 3 and d["paths"] == 50
        assert d["mean"][0] == 0.0

    def test_model_dict(self, dirac_model):
        d = dirac_model.to_dict()
        assert len(d["components"]) == 1
        json.dumps(d)

    def test_keep_driver(self, dirac_model):
        ens = simulate(dirac_model, GRID, 100, seed=1, keep_driver=True)
        assert isinstance(ens, PathEnsemble) and ens.driver.shape == ens.paths.shape
