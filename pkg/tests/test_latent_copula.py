import itertools

import numpy as np
import pytest
from scipy.special import ndtr, ndtri
from scipy.stats import kendalltau

from app.services.latent_copula import (BRIDGE_BOUND, LatentCopulaModel, bridge_tt,
                                        empirical_quantile, fit_tlnpn, invert_bridge,
                                        kendall_tau_matrix, mvn_cdf, nearest_correlation,
                                        phi4, sample_tlnpn, zero_truncation_levels,
                                        bridge_correlations)
from app.utils.errors import (ConstantColumnError, DegenerateDataError, IntegrationError,
                              InvalidCorrelationError, ShapeError)
from app.utils.linalg import sample_mvn


def _ar(rho, p):
    lags = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    return rho ** lags


def _truncated_counts(n, sigma, zero_fractions, seed):
    """Zero below the latent threshold, a strictly increasing count transform above it."""
    latent = sample_mvn(n, sigma, seed)
    thresholds = ndtri(np.asarray(zero_fractions))
    positive = np.rint(100 * np.exp(latent)) + 1
    return np.where(latent < thresholds, 0.0, positive)


def _tau_a_bruteforce(x, y):
    n = len(x)
    total = sum(np.sign(x[i] - x[k]) * np.sign(y[i] - y[k])
                for i, k in itertools.combinations(range(n), 2))
    return total / (n * (n - 1) / 2)


def test_kendall_matrix_matches_scipy_without_ties():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((60, 3))
    tau = kendall_tau_matrix(data).tau
    for j, k in itertools.combinations(range(3), 2):
        assert tau[j, k] == pytest.approx(kendalltau(data[:, j], data[:, k])[0], abs=1e-12)
    np.testing.assert_array_equal(np.diag(tau), 1.0)
    np.testing.assert_allclose(tau, tau.T)


def test_kendall_matrix_counts_ties_as_zero():
    rng = np.random.default_rng(1)
    data = rng.integers(0, 3, (25, 2)).astype(float)
    tau = kendall_tau_matrix(data).tau
    assert tau[0, 1] == pytest.approx(_tau_a_bruteforce(data[:, 0], data[:, 1]), abs=1e-12)


def test_constant_column_raises():
    data = np.column_stack([np.arange(10.0), np.zeros(10)])
    with pytest.raises(ConstantColumnError) as excinfo:
        kendall_tau_matrix(data)
    assert excinfo.value.column == 1


def test_truncation_levels_are_clamped():
    data = np.column_stack([np.r_[np.zeros(5), np.arange(1, 6)], np.arange(1, 11)])
    delta = zero_truncation_levels(data)
    assert delta[0] == pytest.approx(0.0, abs=1e-12)
    assert delta[1] == pytest.approx(ndtri(1 / 40))


def test_phi4_under_independence_factorizes():
    a = np.array([1.0, -0.5, 0.3, 2.0])
    assert phi4(a, np.eye(4)) == pytest.approx(np.prod(ndtr(a)), abs=1e-5)
    assert phi4(np.zeros(4), np.eye(4)) == pytest.approx(1 / 16, abs=1e-5)


def test_phi4_exchangeable_orthant():
    # P(all four positive) for equicorrelation 1/2 is 1/5
    sigma = np.full((4, 4), 0.5) + 0.5 * np.eye(4)
    assert phi4(np.zeros(4), sigma) == pytest.approx(0.2, abs=1e-5)


def test_mvn_cdf_drops_infinite_limits():
    sigma = _ar(0.4, 3)
    assert mvn_cdf(np.array([0.0, np.inf, np.inf]), sigma) == pytest.approx(0.5, abs=1e-12)
    assert mvn_cdf(np.array([0.0, -np.inf, 1.0]), sigma) == 0.0
    # bivariate orthant: 1/4 + arcsin(rho) / (2 pi)
    expected = 0.25 + np.arcsin(0.4) / (2 * np.pi)
    assert mvn_cdf(np.array([0.0, 0.0, np.inf]), sigma) == pytest.approx(expected, abs=1e-6)


def test_phi4_rejects_non_positive_definite():
    sigma = np.full((4, 4), 1.0)
    with pytest.raises(InvalidCorrelationError):
        phi4(np.zeros(4), sigma)


def test_phi4_needs_four_limits():
    with pytest.raises(ShapeError):
        phi4(np.zeros(3), np.eye(3))


@pytest.mark.parametrize("delta", [-1.0, 0.0, 1.0])
def test_bridge_vanishes_at_zero(delta):
    assert bridge_tt(0.0, delta, delta) == pytest.approx(0.0, abs=1e-6)


def test_bridge_without_truncation_is_arcsine_law():
    for sigma in (-0.7, 0.2, 0.5, 0.9):
        assert bridge_tt(sigma, -8.0, -8.0) == pytest.approx(2 / np.pi * np.arcsin(sigma), abs=1e-6)


@pytest.mark.parametrize("sigma,delta_j,delta_k", [(0.6, 0.3, -0.5), (-0.4, 1.0, 0.2), (0.95, -0.8, 0.0)])
def test_bridge_agrees_with_general_orthants(sigma, delta_j, delta_k):
    sigma4a, sigma4b = bridge_correlations(sigma)
    a = np.array([-delta_j, -delta_k, 0.0, 0.0])
    expected = -2 * phi4(a, sigma4a) + 2 * phi4(a, sigma4b)
    assert bridge_tt(sigma, delta_j, delta_k) == pytest.approx(expected, abs=2e-5)


def test_bridge_resolves_near_unit_correlation():
    values = [bridge_tt(s, 0.5, -0.2) for s in (0.99, 0.999, BRIDGE_BOUND)]
    assert np.all(np.diff(values) > 0)
    # comonotone limit: only pairs tied at zero in the heavier column are lost
    assert values[-1] == pytest.approx(1 - ndtr(0.5) ** 2, abs=0.02)
    assert values[-1] < 1 - ndtr(0.5) ** 2


def test_bridge_reports_unreachable_tolerance():
    with pytest.raises(IntegrationError):
        bridge_tt(0.5, 0.0, 0.0, tol=1e-30)


@pytest.mark.parametrize("delta", [-1.0, 0.0, 1.0])
def test_bridge_is_strictly_increasing(delta):
    grid = np.linspace(-0.9, 0.9, 37)
    values = np.array([bridge_tt(s, delta, delta) for s in grid])
    assert np.all(np.diff(values) > 0)


@pytest.mark.parametrize("delta", [-1.0, 0.0, 1.0])
def test_bridge_round_trip(delta):
    for sigma in np.round(np.arange(-0.9, 0.91, 0.1), 10):
        root = invert_bridge(bridge_tt(sigma, delta, delta), delta, delta)
        assert not root.clamped
        assert root.sigma == pytest.approx(sigma, abs=1e-5)


def test_bridge_round_trip_with_unequal_truncation():
    for sigma in (-0.6, -0.2, 0.3, 0.8):
        root = invert_bridge(bridge_tt(sigma, 0.2, -0.4), 0.2, -0.4)
        assert root.sigma == pytest.approx(sigma, abs=1e-5)


def test_bridge_matches_simulated_truncated_pairs():
    """Bridge at sigma=0.5, no shift, against Kendall's tau-a of simulated truncated pairs"""
    n = 1_000_000
    latent = sample_mvn(n, np.array([[1.0, 0.5], [0.5, 1.0]]), 12345)
    x = np.maximum(latent, 0.0)
    tau_b = kendalltau(x[:, 0], x[:, 1])[0]
    pairs = n * (n - 1) / 2
    ties = [np.sum(x[:, j] == 0) for j in range(2)]
    tied_pairs = [t * (t - 1) / 2 for t in ties]
    tau_a = tau_b * np.sqrt((pairs - tied_pairs[0]) * (pairs - tied_pairs[1])) / pairs
    assert bridge_tt(0.5, 0.0, 0.0) == pytest.approx(tau_a, abs=0.003)


def test_zero_tau_inverts_to_zero():
    root = invert_bridge(0.0, 0.5, -0.3)
    assert root.sigma == 0.0
    assert not root.clamped


def test_unreachable_tau_is_clamped():
    root = invert_bridge(0.95, 1.0, 1.0)
    assert root.clamped
    assert root.sigma == BRIDGE_BOUND
    root = invert_bridge(-0.95, 1.0, 1.0)
    assert root.clamped
    assert root.sigma == -BRIDGE_BOUND


def test_nearest_correlation_keeps_positive_definite_input():
    sigma = _ar(0.6, 5)
    np.testing.assert_allclose(nearest_correlation(sigma), sigma, atol=1e-12)


def test_nearest_correlation_repairs_indefinite_input():
    bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    fixed = nearest_correlation(bad)
    assert np.linalg.eigvalsh(fixed).min() > 0
    np.testing.assert_allclose(np.diag(fixed), 1.0)
    np.testing.assert_allclose(fixed, fixed.T)
    np.linalg.cholesky(fixed)


def test_empirical_quantile_is_right_continuous_inverse():
    values = np.array([0, 0, 1, 3, 7])
    u = np.array([1e-9, 0.4, 0.41, 0.6, 0.99, 1.0])
    np.testing.assert_array_equal(empirical_quantile(values, u), [0, 0, 1, 1, 7, 7])


def test_fit_recovers_latent_correlation():
    sigma = _ar(0.7, 4)
    data = _truncated_counts(1200, sigma, [0.1, 0.3, 0.5, 0.2], seed=21)
    model = fit_tlnpn(data, tol=1e-5)
    assert np.max(np.abs(model.sigma_hat - sigma)) < 0.15
    np.testing.assert_allclose(model.zero_fractions, np.mean(data == 0, axis=0))
    assert model.clamped_pairs == ()


def test_fit_parallel_matches_serial():
    data = _truncated_counts(300, _ar(0.5, 3), [0.2, 0.4, 0.3], seed=8)
    serial = fit_tlnpn(data, n_jobs=1, tol=1e-4)
    parallel = fit_tlnpn(data, n_jobs=2, tol=1e-4)
    np.testing.assert_allclose(serial.sigma_hat, parallel.sigma_hat, atol=1e-12)


def test_fit_rejects_tiny_inputs():
    with pytest.raises(DegenerateDataError):
        fit_tlnpn(np.arange(18.0).reshape(9, 2))
    with pytest.raises(DegenerateDataError):
        fit_tlnpn(np.arange(20.0).reshape(20, 1))


def test_samples_reuse_stored_marginals():
    data = _truncated_counts(600, _ar(0.5, 3), [0.2, 0.5, 0.7], seed=4)
    model = fit_tlnpn(data, tol=1e-4)
    draws = sample_tlnpn(model, 5000, seed=1)
    assert draws.shape == (5000, 3)
    for j in range(3):
        assert set(np.unique(draws[:, j])) <= set(np.unique(data[:, j]))
        share = model.zero_fractions[j]
        se = np.sqrt(share * (1 - share) / 5000)
        assert abs(np.mean(draws[:, j] == 0) - share) < 3 * se + 1 / 600
    np.testing.assert_array_equal(draws, sample_tlnpn(model, 5000, seed=1))


def test_model_validates_correlation():
    with pytest.raises(InvalidCorrelationError):
        LatentCopulaModel(sigma_hat=np.array([[1.0, 0.2], [0.3, 1.0]]), delta_hat=np.zeros(2),
                          marginals=(np.zeros(3), np.ones(3)))
