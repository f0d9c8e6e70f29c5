import itertools

import numpy as np
import pytest

from app.utils.errors import InvalidParameterError, ShapeError, UndefinedComparisonError
from app.utils.metrics import (GoodnessOfFitMetrics, amc, correlation_discrepancy,
                               marginal_distances, sorted_residuals, wasserstein_1d, wasserstein_pd)


def _bruteforce_wasserstein(X, Y, order):
    best = min(
        np.mean(np.linalg.norm(X - Y[list(perm)], axis=1) ** order)
        for perm in itertools.permutations(range(len(X)))
    )
    return best ** (1 / order)


def test_one_dimensional_distance_matches_sorted_matching():
    assert wasserstein_1d([0, 1, 3], [5, 1, 0], order=1) == pytest.approx(2 / 3)
    assert wasserstein_1d([0, 0], [0, 0]) == 0.0
    assert wasserstein_1d([0, 2], [1, 3], order=2) == pytest.approx(1.0)


@pytest.mark.parametrize("order", [1, 2])
def test_assignment_matches_permutation_search(order):
    rng = np.random.default_rng(order)
    for _ in range(5):
        X = rng.integers(0, 6, (6, 3)).astype(float)
        Y = rng.integers(0, 6, (6, 3)).astype(float)
        assert wasserstein_pd(X, Y, order) == pytest.approx(_bruteforce_wasserstein(X, Y, order))


def test_distance_is_symmetric_and_zero_on_permuted_copy():
    rng = np.random.default_rng(0)
    X = rng.poisson(2, (30, 4))
    assert wasserstein_pd(X, X[rng.permutation(30)]) == pytest.approx(0.0, abs=1e-12)
    Y = rng.poisson(3, (30, 4))
    assert wasserstein_pd(X, Y) == pytest.approx(wasserstein_pd(Y, X))


def test_single_column_agrees_with_one_dimensional_formula():
    rng = np.random.default_rng(1)
    x, y = rng.poisson(4, 40), rng.poisson(5, 40)
    assert wasserstein_pd(x, y, 1) == pytest.approx(wasserstein_1d(x, y, 1))


def test_mismatched_shapes_raise():
    with pytest.raises(ShapeError):
        wasserstein_pd(np.zeros((5, 2)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        wasserstein_1d([], [])


def test_unsupported_order_raises():
    with pytest.raises(InvalidParameterError):
        wasserstein_pd(np.zeros((2, 2)), np.zeros((2, 2)), order=3)


def test_marginal_distances_per_column():
    X = np.array([[0, 1], [2, 3]])
    Y = np.array([[2, 1], [0, 5]])
    np.testing.assert_allclose(marginal_distances(X, Y), [0.0, np.sqrt(2.0)])


def test_amc_sign_and_scale():
    assert amc(2.0, 1.0) == pytest.approx(-2 / 3)
    assert amc(1.0, 1.0) == 0.0
    assert amc(0.0, 4.0) == pytest.approx(2.0)
    assert GoodnessOfFitMetrics.amc(4.0, 0.0) == pytest.approx(-2.0)


def test_amc_edge_cases():
    with pytest.raises(UndefinedComparisonError):
        amc(0.0, 0.0)
    with pytest.raises(InvalidParameterError):
        amc(-1.0, 1.0)


def test_correlation_discrepancy_ignores_constant_columns():
    rng = np.random.default_rng(3)
    observed = rng.poisson(3, (50, 3)).astype(float)
    simulated = observed.copy()
    simulated[:, 2] = 1.0
    result = correlation_discrepancy(simulated, observed)
    assert result["max_abs"] == pytest.approx(0.0)
    assert result["mean_abs"] == pytest.approx(0.0)


def test_sorted_residuals():
    residuals = sorted_residuals([[3], [1]], [[0], [2]])
    np.testing.assert_array_equal(residuals, [[1], [1]])
