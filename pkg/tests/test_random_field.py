import math

import numpy as np
import pytest

from prefgeo import (DegenerateMatrixError, NumericalError, ParameterError,
                     Params, PreferentialDataset, build_grid,
                     cholesky_with_jitter, conditional_gp_given_y,
                     correlation_matrix, exp_correlation, sample_gp)

UNIT = (0.0, 1.0, 0.0, 1.0)


class TestParams:
    def test_valid_construction(self):
        th = Params(mu=4, tau2=0.1, sigma2=1.5, phi=0.15, beta=2.0)
        assert th.beta == 2.0

    @pytest.mark.parametrize("bad", [
        {"tau2": -0.1}, {"sigma2": 0.0}, {"sigma2": -1.0}, {"phi": 0.0},
        {"phi": -2.0}, {"mu": float("nan")}, {"beta": float("inf")},
    ])
    def test_domain_violations(self, bad):
        base = {"mu": 0.0, "tau2": 0.1, "sigma2": 1.0, "phi": 0.5, "beta": 0.0}
        base.update(bad)
        with pytest.raises(ParameterError):
            Params(**base)

    def test_beta_absent_allowed(self):
        assert Params(mu=0, tau2=0, sigma2=1, phi=1).beta is None

    def test_dict_round_trip(self):
        th = Params(mu=1, tau2=0.2, sigma2=2.0, phi=0.3, beta=None)
        assert Params.from_dict(th.to_dict()) == th


class TestExpCorrelation:
    def test_zero_distance(self):
        assert exp_correlation(0.0, 0.7) == 1.0

    def test_analytic_values(self):
        assert exp_correlation(0.15, 0.15) == pytest.approx(math.exp(-1), abs=1e-12)
        assert exp_correlation(0.3, 0.15) == pytest.approx(math.exp(-2), abs=1e-12)

    def test_invalid_phi(self):
        with pytest.raises(ParameterError):
            exp_correlation(1.0, 0.0)

    def test_monotone_in_h_and_phi(self):
        h = np.linspace(0.01, 3.0, 50)
        rho = exp_correlation(h, 0.4)
        assert (np.diff(rho) < 0).all()
        phis = np.linspace(0.05, 2.0, 40)
        rho_phi = np.array([exp_correlation(1.0, p) for p in phis])
        assert (np.diff(rho_phi) > 0).all()


class TestCorrelationMatrix:
    def test_single_point(self):
        R = correlation_matrix(np.array([[0.3, 0.4]]), 0.2)
        np.testing.assert_allclose(R, [[1.0]])

    def test_two_points(self):
        pts = np.array([[0.0, 0.0], [0.3, 0.4]])  # distance 0.5
        R = correlation_matrix(pts, 0.25)
        assert R[0, 1] == pytest.approx(math.exp(-2.0), abs=1e-12)
        assert R[1, 0] == R[0, 1] and R[0, 0] == 1.0

    def test_duplicates_rejected(self):
        pts = np.array([[0.1, 0.1], [0.5, 0.5], [0.1, 0.1]])
        with pytest.raises(DegenerateMatrixError):
            correlation_matrix(pts, 0.3)

    def test_grid_225_factorizable(self):
        # factorization oracle: the Cholesky itself is the check
        g = build_grid(UNIT, 15, 15)
        R = correlation_matrix(g.centroids, 0.15)
        L, jitter = cholesky_with_jitter(R)
        np.testing.assert_allclose(L @ L.T, R + jitter * np.eye(225), atol=1e-8)

    def test_entries_in_unit_interval_symmetric(self):
        rng = np.random.default_rng(3)
        pts = rng.random((40, 2))
        R = correlation_matrix(pts, 0.3)
        assert (R > 0).all() and (R <= 1).all()
        np.testing.assert_allclose(R, R.T, atol=1e-15)


class TestCholeskyJitter:
    def test_singular_matrix_rescued(self):
        M = np.ones((4, 4))
        L, jitter = cholesky_with_jitter(M)
        assert jitter > 0
        np.testing.assert_allclose(L @ L.T, M + jitter * np.eye(4), atol=1e-10)

    def test_indefinite_matrix_fails_with_attempts(self):
        M = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NumericalError, match="jitters"):
            cholesky_with_jitter(M)


class TestSampleGp:
    def test_zero_variance(self):
        R = np.eye(5)
        s = sample_gp(R, 0.0, seed=1)
        np.testing.assert_array_equal(s.values, np.zeros(5))

    def test_single_point_scaling(self):
        z = np.random.default_rng(9).standard_normal(1)
        s = sample_gp(np.eye(1), 1.5, seed=9)
        assert s.values[0] == pytest.approx(math.sqrt(1.5) * z[0], rel=1e-14)

    def test_seed_reproducibility(self):
        R = correlation_matrix(np.random.default_rng(0).random((6, 2)), 0.4)
        a = sample_gp(R, 2.0, seed=123)
        b = sample_gp(R, 2.0, seed=123)
        c = sample_gp(R, 2.0, seed=124)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_sample_covariance_three_points(self):
        # Monte Carlo oracle: empirical covariance of many draws
        pts = np.array([[0.0, 0.0], [0.2, 0.0], [0.0, 0.6]])
        sigma2 = 1.3
        R = correlation_matrix(pts, 0.3)
        target = sigma2 * R
        M = 10_000
        draws = np.array([sample_gp(R, sigma2, seed=s).values for s in range(M)])
        emp = np.cov(draws.T)
        se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target ** 2) / M)
        assert (np.abs(emp - target) <= 3 * se).all()


class TestConditionalGp:
    def _toy(self, tau2, grid_n=2, n_obs=2):
        g = build_grid(UNIT, grid_n, grid_n)
        rng = np.random.default_rng(5)
        locs = g.centroids[rng.choice(g.n_cells, size=n_obs, replace=False)]
        y = rng.normal(1.0, 1.0, size=n_obs)
        theta = Params(mu=0.5, tau2=tau2, sigma2=2.0, phi=0.4, beta=None)
        return g, PreferentialDataset.from_locations(g, locs, y), theta

    def test_large_nugget_approaches_unconditional(self):
        g, data, theta = self._toy(tau2=1e6, grid_n=3, n_obs=4)
        cond = conditional_gp_given_y(data, g, theta, seed=11)
        # unconditional part of the same draw: same seed, first N normals
        R = correlation_matrix(g.centroids, theta.phi)
        L, _ = cholesky_with_jitter(R)
        z = np.random.default_rng(11).standard_normal(g.n_cells)
        uncond = math.sqrt(theta.sigma2) * (L @ z)
        tol = 1e-2 * math.sqrt(theta.sigma2)
        assert np.max(np.abs(cond.values - uncond)) < tol

    def test_zero_nugget_single_cell_interpolates(self):
        g = build_grid(UNIT, 1, 1)
        data = PreferentialDataset.from_locations(
            g, np.array([[0.5, 0.5]]), np.array([3.7]))
        theta = Params(mu=1.2, tau2=0.0, sigma2=1.0, phi=0.3, beta=None)
        s = conditional_gp_given_y(data, g, theta, seed=2)
        assert s.values[0] == pytest.approx(3.7 - 1.2, abs=1e-12)

    def test_moments_match_gaussian_conditioning(self):
        # closed-form Gaussian conditioning oracle on N=4, n=2
        g = build_grid(UNIT, 2, 2)
        locs = np.array([[0.2, 0.2], [0.7, 0.8]])
        y = np.array([2.5, -0.5])
        data = PreferentialDataset.from_locations(g, locs, y)
        theta = Params(mu=1.0, tau2=0.3, sigma2=2.0, phi=0.4, beta=None)
        R = correlation_matrix(g.centroids, theta.phi)
        Sig = theta.sigma2 * R
        obs = data.binning.cell_of
        Minv = np.linalg.inv(Sig[np.ix_(obs, obs)] + theta.tau2 * np.eye(2))
        mean_true = Sig[:, obs] @ Minv @ (y - theta.mu)
        cov_true = Sig - Sig[:, obs] @ Minv @ Sig[obs, :]
        M = 10_000
        draws = np.array([conditional_gp_given_y(data, g, theta, seed=s).values
                          for s in range(M)])
        se_mean = draws.std(axis=0, ddof=1) / math.sqrt(M)
        assert (np.abs(draws.mean(axis=0) - mean_true) <= 3 * se_mean).all()
        emp_cov = np.cov(draws.T)
        se_cov = np.sqrt((np.outer(np.diag(cov_true), np.diag(cov_true))
                          + cov_true ** 2) / M)
        assert (np.abs(emp_cov - cov_true) <= 3 * se_cov).all()

    def test_small_nugget_shrinks_to_residual_at_observed_cells(self):
        g, data, theta = self._toy(tau2=1e-10, grid_n=3, n_obs=3)
        s = conditional_gp_given_y(data, g, theta, seed=8)
        obs = data.binning.cell_of
        np.testing.assert_allclose(s.values[obs], data.y - theta.mu, atol=1e-3)

    def test_deterministic_given_seed(self):
        g, data, theta = self._toy(tau2=0.2)
        a = conditional_gp_given_y(data, g, theta, seed=77)
        b = conditional_gp_given_y(data, g, theta, seed=77)
        np.testing.assert_array_equal(a.values, b.values)
