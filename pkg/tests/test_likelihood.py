import math

import numpy as np
import pytest
from scipy.stats import norm

from prefgeo import (LatentField, ParameterError, Params,
                     PreferentialDataset, build_grid, complete_loglik,
                     correlation_matrix, log_f_s, log_f_x_given_s,
                     log_f_y_given_xs, nonpref_marginal_loglik)

UNIT = (0.0, 1.0, 0.0, 1.0)


class TestMeasurementDensity:
    def test_normalizer_identity(self):
        # exact fit with tau2 = 1/(2*pi) makes the log-density vanish
        val = log_f_y_given_xs(np.array([2.0]), np.array([1.5]), 0.5,
                               1.0 / (2 * math.pi))
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_unit_residual(self):
        val = log_f_y_given_xs(np.array([1.0]), np.array([0.0]), 0.0, 1.0)
        assert val == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5, abs=1e-12)

    def test_matches_reference_logpdf(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=5)
        s = rng.normal(size=5)
        mu, tau2 = 0.7, 0.42
        expect = norm.logpdf(y, loc=mu + s, scale=math.sqrt(tau2)).sum()
        assert log_f_y_given_xs(y, s, mu, tau2) == pytest.approx(expect, abs=1e-12)

    def test_invalid_tau2(self):
        with pytest.raises(ParameterError):
            log_f_y_given_xs(np.array([1.0]), np.array([0.0]), 0.0, 0.0)


class TestFieldPrior:
    def test_scalar_standard_normal(self):
        val = log_f_s(np.zeros(1), 1.0, np.eye(1))
        assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-14)

    def test_zero_field_any_dimension(self):
        pts = np.random.default_rng(1).random((6, 2))
        R = correlation_matrix(pts, 0.4)
        sigma2 = 1.8
        expect = -0.5 * (6 * math.log(2 * math.pi * sigma2)
                         + np.linalg.slogdet(R)[1])
        assert log_f_s(np.zeros(6), sigma2, R) == pytest.approx(expect, abs=1e-11)

    def test_matches_explicit_inverse(self):
        # explicit-inverse oracle on a random SPD instance
        rng = np.random.default_rng(2)
        pts = rng.random((4, 2))
        R = correlation_matrix(pts, 0.5)
        s = rng.normal(size=4)
        sigma2 = 0.9
        quad = s @ np.linalg.inv(R) @ s
        expect = (-0.5 * 4 * math.log(2 * math.pi * sigma2)
                  - 0.5 * np.linalg.slogdet(R)[1] - 0.5 * quad / sigma2)
        assert log_f_s(s, sigma2, R) == pytest.approx(expect, abs=1e-10)


def _instance(seed=3, nx=2, n=2):
    rng = np.random.default_rng(seed)
    g = build_grid(UNIT, nx, nx)
    pts = rng.random((n, 2))
    y = rng.normal(2.0, 1.0, size=n)
    data = PreferentialDataset.from_locations(g, pts, y)
    s = LatentField(rng.normal(size=g.n_cells))
    theta = Params(mu=1.5, tau2=0.4, sigma2=1.2, phi=0.35, beta=1.1)
    R = correlation_matrix(g.centroids, theta.phi)
    return g, data, s, theta, R


class TestCompleteLoglik:
    def test_equals_sum_of_components(self):
        g, data, s, theta, R = _instance()
        total = complete_loglik(theta, s, data, g, R)
        parts = (log_f_y_given_xs(data.y, s.values[data.binning.cell_of],
                                  theta.mu, theta.tau2)
                 + log_f_x_given_s(data.binning, s, theta.beta, g)
                 + log_f_s(s, theta.sigma2, R))
        assert total == pytest.approx(parts, abs=1e-12)

    def test_beta_zero_point_process_part(self):
        g, data, s, theta, R = _instance()
        theta0 = theta.replace(beta=0.0)
        pp = (complete_loglik(theta0, s, data, g, R)
              - log_f_y_given_xs(data.y, s.values[data.binning.cell_of],
                                 theta0.mu, theta0.tau2)
              - log_f_s(s, theta0.sigma2, R))
        assert pp == pytest.approx(-data.n * math.log(1.0), abs=1e-10)

    def test_matches_independent_transcription(self):
        # from-scratch transcription oracle of the three-term expression
        g, data, s, theta, R = _instance(seed=11)
        n = data.n
        N = g.n_cells
        obs = data.binning.cell_of
        resid = data.y - theta.mu - s.values[obs]
        counts = data.binning.counts
        expect = (
            -0.5 * n * math.log(2 * math.pi * theta.tau2)
            - 0.5 * (resid @ resid) / theta.tau2
            + theta.beta * (counts @ s.values)
            - n * math.log(np.sum(g.cell_area * np.exp(theta.beta * s.values)))
            - 0.5 * N * math.log(2 * math.pi * theta.sigma2)
            - 0.5 * np.linalg.slogdet(R)[1]
            - 0.5 * (s.values @ np.linalg.inv(R) @ s.values) / theta.sigma2)
        assert complete_loglik(theta, s, data, g, R) == pytest.approx(expect, abs=1e-10)

    def test_decreases_as_residuals_grow(self):
        g, data, s, theta, R = _instance(seed=4, nx=3, n=5)
        base = complete_loglik(theta, s, data, g, R)
        obs = data.binning.cell_of
        resid = data.y - theta.mu - s.values[obs]
        for scale in (2.0, 5.0):
            y_scaled = theta.mu + s.values[obs] + scale * resid
            data_scaled = PreferentialDataset.from_locations(
                g, data.locations, y_scaled)
            assert complete_loglik(theta, s, data_scaled, g, R) < base

    def test_finite_on_finite_inputs(self):
        g, data, s, theta, R = _instance(seed=6, nx=4, n=7)
        assert np.isfinite(complete_loglik(theta, s, data, g, R))


class TestNonprefMarginal:
    def test_single_observation(self):
        g = build_grid(UNIT, 2, 2)
        data = PreferentialDataset.from_locations(
            g, np.array([[0.3, 0.3]]), np.array([2.2]))
        theta = Params(mu=1.0, tau2=0.5, sigma2=1.5, phi=0.3, beta=None)
        expect = norm.logpdf(2.2, loc=1.0, scale=math.sqrt(0.5 + 1.5))
        assert nonpref_marginal_loglik(theta, data) == pytest.approx(expect, abs=1e-12)

    def test_short_range_limit_is_independence(self):
        g = build_grid(UNIT, 3, 3)
        rng = np.random.default_rng(5)
        pts = rng.random((6, 2))
        y = rng.normal(size=6)
        data = PreferentialDataset.from_locations(g, pts, y)
        theta = Params(mu=0.2, tau2=0.3, sigma2=0.8, phi=1e-8, beta=None)
        expect = norm.logpdf(y, loc=0.2, scale=math.sqrt(0.3 + 0.8)).sum()
        assert nonpref_marginal_loglik(theta, data) == pytest.approx(expect, abs=1e-6)

    def test_matches_explicit_inverse(self):
        g = build_grid(UNIT, 3, 3)
        rng = np.random.default_rng(7)
        pts = rng.random((3, 2))
        y = rng.normal(1.0, 2.0, size=3)
        data = PreferentialDataset.from_locations(g, pts, y)
        theta = Params(mu=0.8, tau2=0.25, sigma2=1.4, phi=0.5, beta=None)
        d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        cov = theta.sigma2 * np.exp(-d / theta.phi) + theta.tau2 * np.eye(3)
        resid = y - theta.mu
        expect = (-0.5 * 3 * math.log(2 * math.pi)
                  - 0.5 * np.linalg.slogdet(cov)[1]
                  - 0.5 * resid @ np.linalg.inv(cov) @ resid)
        assert nonpref_marginal_loglik(theta, data) == pytest.approx(expect, abs=1e-10)

    def test_uses_exact_distances_not_binning(self):
        # two distinct locations in the SAME cell must not be treated as one
        g = build_grid(UNIT, 2, 2)
        pts = np.array([[0.10, 0.10], [0.40, 0.40]])
        y = np.array([1.0, -1.0])
        data = PreferentialDataset.from_locations(g, pts, y)
        assert data.binning.cell_of[0] == data.binning.cell_of[1]
        theta = Params(mu=0.0, tau2=0.2, sigma2=1.0, phi=0.3, beta=None)
        d = math.hypot(0.3, 0.3)
        cov = theta.sigma2 * np.array([[1.0, math.exp(-d / 0.3)],
                                       [math.exp(-d / 0.3), 1.0]])
        cov += theta.tau2 * np.eye(2)
        expect = (-math.log(2 * math.pi) - 0.5 * np.linalg.slogdet(cov)[1]
                  - 0.5 * y @ np.linalg.inv(cov) @ y)
        assert nonpref_marginal_loglik(theta, data) == pytest.approx(expect, abs=1e-10)
