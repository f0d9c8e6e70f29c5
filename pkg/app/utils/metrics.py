import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from app.utils.errors import InvalidParameterError, ShapeError, UndefinedComparisonError


def _check_order(order: int) -> None:
    if order not in (1, 2):
        raise InvalidParameterError(f"Wasserstein order must be 1 or 2, got {order}")


def _as_matrix(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values[:, None] if values.ndim == 1 else values


class GoodnessOfFitMetrics:
    @staticmethod
    def wasserstein_1d(x, y, order: int = 2) -> float:
        """Empirical W_order between equal-size samples, by matching order statistics."""
        _check_order(order)
        x = np.sort(np.asarray(x, dtype=float).ravel())
        y = np.sort(np.asarray(y, dtype=float).ravel())
        if x.size != y.size or x.size == 0:
            raise ShapeError(f"samples must have equal nonzero length, got {x.size} and {y.size}")
        return float(np.mean(np.abs(x - y) ** order) ** (1 / order))

    @staticmethod
    def wasserstein_pd(X, Y, order: int = 2) -> float:
        """Exact empirical W_order between two point clouds with the Euclidean ground metric."""
        _check_order(order)
        X, Y = _as_matrix(X), _as_matrix(Y)
        if X.ndim != 2 or X.shape != Y.shape or X.shape[0] == 0:
            raise ShapeError(f"point clouds must share a nonempty shape, got {X.shape} and {Y.shape}")
        cost = cdist(X, Y) ** order
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean() ** (1 / order))

    @staticmethod
    def marginal_distances(X, Y, order: int = 2) -> np.ndarray:
        X, Y = _as_matrix(X), _as_matrix(Y)
        if X.shape != Y.shape:
            raise ShapeError(f"point clouds must share a shape, got {X.shape} and {Y.shape}")
        return np.array([GoodnessOfFitMetrics.wasserstein_1d(X[:, j], Y[:, j], order)
                         for j in range(X.shape[1])])

    @staticmethod
    def amc(omega_hnb: float, omega_tlnpn: float) -> float:
        """Relative distance difference; negative means the copula model fits better."""
        if omega_hnb < 0 or omega_tlnpn < 0:
            raise InvalidParameterError("distances must be nonnegative")
        if omega_hnb == 0 and omega_tlnpn == 0:
            raise UndefinedComparisonError("both distances are zero; AMC is undefined")
        return float((omega_tlnpn - omega_hnb) / ((omega_tlnpn + omega_hnb) / 2))

    @staticmethod
    def correlation_discrepancy(simulated, observed) -> dict:
        """Max and mean absolute gap between off-diagonal Kendall correlations.

        Pairs involving a constant column are ignored.
        """
        simulated, observed = _as_matrix(simulated), _as_matrix(observed)
        if simulated.shape[1] != observed.shape[1]:
            raise ShapeError("samples must have the same number of variables")
        tau_sim = pd.DataFrame(simulated).corr(method="kendall").to_numpy()
        tau_obs = pd.DataFrame(observed).corr(method="kendall").to_numpy()
        upper = np.triu_indices(simulated.shape[1], 1)
        gaps = np.abs(tau_sim[upper] - tau_obs[upper])
        gaps = gaps[np.isfinite(gaps)]
        if gaps.size == 0:
            return {"max_abs": float("nan"), "mean_abs": float("nan")}
        return {"max_abs": float(gaps.max()), "mean_abs": float(gaps.mean())}

    @staticmethod
    def sorted_residuals(simulated, observed) -> np.ndarray:
        """Per-variable differences between sorted simulated and sorted held-out values."""
        simulated, observed = _as_matrix(simulated), _as_matrix(observed)
        if simulated.shape != observed.shape:
            raise ShapeError(f"samples must share a shape, got {simulated.shape} and {observed.shape}")
        return np.sort(simulated, axis=0) - np.sort(observed, axis=0)


wasserstein_1d = GoodnessOfFitMetrics.wasserstein_1d
wasserstein_pd = GoodnessOfFitMetrics.wasserstein_pd
marginal_distances = GoodnessOfFitMetrics.marginal_distances
amc = GoodnessOfFitMetrics.amc
correlation_discrepancy = GoodnessOfFitMetrics.correlation_discrepancy
sorted_residuals = GoodnessOfFitMetrics.sorted_residuals
