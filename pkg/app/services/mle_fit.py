"""Maximum-likelihood ZINB / HNB / NB regressions (log link for the mean, logit for zeros)."""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, gammaln, logit
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from app.models.params import FitOptions, Flavor
from app.services.count_models import draw_counts, nb_log_zero, nb_logpmf
from app.utils.errors import (DegenerateDataError, IllConditionedDesignError,
                              InitializationError, InvalidParameterError, ShapeError)

logger = logging.getLogger(__name__)

_MAX_LOG_MEAN = np.log(np.finfo(float).max)
WARM_PASSES = 3


@dataclass(frozen=True)
class RegressionCoefficients:
    beta: np.ndarray
    gamma: np.ndarray
    log_r: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float).ravel())
        values = np.concatenate([self.beta, self.gamma, [self.log_r]])
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("regression coefficients must be finite")

    @property
    def r(self) -> float:
        return float(np.exp(self.log_r))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma, [self.log_r]])

    @classmethod
    def from_vector(cls, vector: np.ndarray, q1: int, q2: int) -> "RegressionCoefficients":
        return cls(beta=vector[:q1], gamma=vector[q1:q1 + q2], log_r=float(vector[q1 + q2]))


@dataclass(frozen=True)
class RegressionFit:
    coefficients: RegressionCoefficients
    loglik: float
    n_params: int
    aic: float
    flavor: Flavor
    converged: bool
    n_obs: int
    trace: Tuple[float, ...] = field(default=(), repr=False)
    max_zero_weight: float = 0.0

    @classmethod
    def build(cls, coefficients: RegressionCoefficients, loglik: float, flavor: Flavor,
              converged: bool, n_obs: int, trace=(), max_zero_weight: float = 0.0) -> "RegressionFit":
        n_params = coefficients.beta.size + coefficients.gamma.size + 1
        return cls(coefficients=coefficients, loglik=float(loglik), n_params=n_params,
                   aic=2 * n_params - 2 * float(loglik), flavor=flavor,
                   converged=bool(converged), n_obs=n_obs, trace=tuple(trace),
                   max_zero_weight=float(max_zero_weight))

    def predict(self, X: np.ndarray, Z: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Per-row NB mean and zero weight for new covariates."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mu = _linear_mean(X, self.coefficients.beta)
        if self.flavor is Flavor.NB:
            return mu, np.zeros_like(mu)
        Z = X if Z is None else np.atleast_2d(np.asarray(Z, dtype=float))
        return mu, expit(Z @ self.coefficients.gamma)

    @property
    def at_zero_boundary(self) -> bool:
        """True when every fitted ZINB zero weight on the training rows is below 1e-3."""
        return self.flavor is Flavor.ZINB and self.max_zero_weight < 1e-3


class LoglikTerms(NamedTuple):
    l1: float
    l2: float
    l3: float
    l4: float
    total: float


def _linear_mean(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    eta = X @ beta
    if not np.all(np.isfinite(eta)) or np.any(eta > _MAX_LOG_MEAN):
        raise IllConditionedDesignError("exp(x'beta) overflows for some observation")
    return np.exp(eta)


def _as_design(y, X, Z=None):
    y = np.asarray(y)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"response of shape {y.shape} does not match design {X.shape}")
    if Z is not None:
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.shape[0] != y.shape[0]:
            raise ShapeError(f"zero-model design {Z.shape} does not match response {y.shape}")
    return y.astype(float), X, Z


def zinb_loglik(y, X, Z, coef: RegressionCoefficients) -> LoglikTerms:
    """ZINB log-likelihood split as L_ZI = L1 + L2 + L3 - L4."""
    y, X, Z = _as_design(y, X, Z)
    mu = _linear_mean(X, coef.beta)
    zg = Z @ coef.gamma
    r = coef.r
    zero = y == 0
    pos = ~zero

    log1p_ratio = np.log1p(mu / r)
    l1 = np.sum(np.logaddexp(zg[zero], -r * log1p_ratio[zero]))
    # sum_{t<y} ln(t + r) telescopes to a log-gamma difference
    l2 = np.sum(gammaln(y[pos] + r) - gammaln(r))
    l3 = np.sum(-gammaln(y[pos] + 1) - (y[pos] + r) * log1p_ratio[pos]
                - y[pos] * np.log(r) + y[pos] * np.log(mu[pos]))
    l4 = np.sum(np.logaddexp(0.0, zg))
    return LoglikTerms(float(l1), float(l2), float(l3), float(l4), float(l1 + l2 + l3 - l4))


def hnb_loglik_parts(y, X, coef: RegressionCoefficients, Z=None) -> Tuple[float, float]:
    """Logistic (zero indicator) and zero-truncated NB (positives) halves of L_H."""
    y, X, Z = _as_design(y, X, Z)
    Z = X if Z is None else Z
    zg = Z @ coef.gamma
    zero = y == 0
    pos = ~zero
    logistic = -np.sum(np.logaddexp(0.0, -zg[zero])) - np.sum(np.logaddexp(0.0, zg[pos]))
    return float(logistic), _truncated_nb_loglik(y[pos], X[pos], coef.beta, coef.r)


def _truncated_nb_loglik(y_pos: np.ndarray, X_pos: np.ndarray, beta: np.ndarray, r: float) -> float:
    # zero mass of the NB kernel is (1 + mu/r)^(-r), consistent with the HNB pmf
    if y_pos.size == 0:
        return 0.0
    mu = _linear_mean(X_pos, beta)
    with np.errstate(divide="ignore"):
        log_trunc = np.log(-np.expm1(nb_log_zero(mu, r)))
    return float(np.sum(nb_logpmf(y_pos, mu, r) - log_trunc))


def hnb_loglik(y, X, coef: RegressionCoefficients, Z=None) -> float:
    logistic, truncated = hnb_loglik_parts(y, X, coef, Z)
    return logistic + truncated


def nb_loglik(y, X, coef: RegressionCoefficients) -> float:
    y, X, _ = _as_design(y, X)
    mu = _linear_mean(X, coef.beta)
    return float(np.sum(nb_logpmf(y, mu, coef.r)))


def flavored_loglik(flavor: Flavor, y, X, Z, coef: RegressionCoefficients) -> float:
    if flavor is Flavor.ZINB:
        return zinb_loglik(y, X, Z, coef).total
    if flavor is Flavor.HNB:
        return hnb_loglik(y, X, coef, Z)
    return nb_loglik(y, X, coef)


class _OptimResult(NamedTuple):
    x: np.ndarray
    loglik: float
    converged: bool
    trace: Tuple[float, ...]


def _safe(fun: Callable[[np.ndarray], float]) -> Callable[[np.ndarray], float]:
    def wrapped(x):
        try:
            value = fun(x)
        except (IllConditionedDesignError, InvalidParameterError, FloatingPointError):
            return np.inf
        return value if np.isfinite(value) else np.inf
    return wrapped


def _has_converged(trace, grad_norm: float, options: FitOptions) -> bool:
    """Both the gradient sup-norm and the last relative log-likelihood change must be small."""
    if not np.isfinite(trace[-1]):
        return False
    rel_change = abs(trace[-1] - trace[-2]) / max(1.0, abs(trace[-1])) if len(trace) > 1 else 0.0
    return grad_norm < options.gtol and rel_change < options.ftol


def _bfgs(mean_nll, x0: np.ndarray, n_obs: int, options: FitOptions) -> _OptimResult:
    trace = [-n_obs * mean_nll(x0)]

    def record(xk):
        trace.append(-n_obs * mean_nll(xk))

    x, converged, res = x0, False, None
    # later passes restart from the last iterate with a fresh Hessian and a tighter gtol
    for attempt in range(WARM_PASSES):
        with warnings.catch_warnings(), np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(mean_nll, x, method="BFGS", jac="3-point", callback=record,
                           options={"maxiter": options.max_iter,
                                    "gtol": options.gtol * 0.1 ** attempt})
        if -n_obs * float(res.fun) > trace[-1]:
            trace.append(-n_obs * float(res.fun))
        grad_norm = float(np.max(np.abs(res.jac))) if np.size(res.jac) else 0.0
        converged = _has_converged(trace, grad_norm, options)
        if converged or not np.isfinite(res.fun) or np.array_equal(res.x, x):
            break
        x = np.asarray(res.x)

    return _OptimResult(np.asarray(res.x), -n_obs * float(res.fun), bool(converged), tuple(trace))


def _maximize(loglik_fn: Callable[[np.ndarray], float], start: np.ndarray, n_obs: int,
              options: FitOptions) -> _OptimResult:
    """BFGS on the per-observation negative log-likelihood with random restarts."""
    mean_nll = _safe(lambda x: -loglik_fn(x) / n_obs)
    rng = np.random.default_rng(options.seed)
    best: Optional[_OptimResult] = None

    for attempt in range(options.n_restarts + 1):
        x0 = start if attempt == 0 else start + rng.normal(scale=options.restart_scale, size=start.size)
        if not np.isfinite(mean_nll(x0)):
            logger.debug("restart %d: non-finite likelihood at start", attempt)
            continue
        result = _bfgs(mean_nll, x0, n_obs, options)
        if best is None or result.loglik > best.loglik:
            best = result
        if best.converged:
            break
        logger.debug("restart %d: not converged (loglik=%.6f)", attempt, result.loglik)

    if best is None:
        raise InitializationError("likelihood is not finite at any starting point")
    if not best.converged:
        logger.warning("fit did not converge within %d iterations and %d restarts",
                       options.max_iter, options.n_restarts)
    return best


def _log_linear_start(y: np.ndarray, X: np.ndarray) -> np.ndarray:
    pos = y > 0
    if not np.any(pos):
        return np.zeros(X.shape[1])
    beta, *_ = np.linalg.lstsq(X[pos], np.log(y[pos]), rcond=None)
    return beta


def _is_intercept_only(Z: np.ndarray) -> bool:
    return Z.shape[1] == 1 and np.all(Z[:, 0] == Z[0, 0]) and Z[0, 0] != 0


def _fit_logistic(Z: np.ndarray, indicator: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Logistic MLE of the zero indicator; closed form for an intercept-only design."""
    n = indicator.size
    if _is_intercept_only(Z):
        share = np.clip(indicator.mean(), 0.5 / n, 1 - 0.5 / n)
        return np.array([logit(share) / Z[0, 0]]), True
    if indicator.all() or not indicator.any():
        logger.warning("zero indicator has a single class; logistic MLE diverges")
        return np.zeros(Z.shape[1]), False
    model = LogisticRegression(penalty=None, fit_intercept=False, solver="newton-cg",
                               tol=1e-10, max_iter=1000)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        model.fit(Z, indicator.astype(int))
    converged = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
    return model.coef_.ravel(), converged


def _initial_coefficients(y: np.ndarray, X: np.ndarray, Z: np.ndarray, flavor: Flavor) -> np.ndarray:
    if flavor is Flavor.NB:
        if _is_intercept_only(X):
            return moment_start(y) / np.array([X[0, 0], 1.0])
        return np.concatenate([_log_linear_start(y, X), [0.0]])
    gamma, _ = _fit_logistic(Z, y == 0)
    return np.concatenate([_log_linear_start(y, X), gamma, [0.0]])


def moment_start(y) -> np.ndarray:
    """(ln mean, ln r) from the NB method of moments; r is capped when var <= mean."""
    y = np.asarray(y, dtype=float)
    mean = max(y.mean(), 1e-8)
    excess = y.var(ddof=1) - mean if y.size > 1 else 0.0
    r = mean ** 2 / excess if excess > 0 else 1e3
    return np.array([np.log(mean), np.log(min(r, 1e3))])


def _check_data(y: np.ndarray, X: np.ndarray, Z: np.ndarray, flavor: Flavor) -> None:
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise DegenerateDataError("responses must be nonnegative integers")
    n_params = X.shape[1] + Z.shape[1] + 1
    if y.size <= n_params:
        raise DegenerateDataError(f"need more than {n_params} observations, got {y.size}")
    n_zero = int(np.sum(y == 0))
    if flavor is Flavor.HNB and n_zero == y.size:
        raise DegenerateDataError("all-zero response: the truncated count part is unidentified")
    if flavor is Flavor.ZINB and n_zero in (0, y.size):
        raise DegenerateDataError("ZINB needs at least one zero and one positive response")


def _fit_hurdle_factorized(y, X, Z, options: FitOptions) -> RegressionFit:
    gamma, logistic_ok = _fit_logistic(Z, y == 0)
    pos = y > 0
    y_pos, X_pos = y[pos], X[pos]
    q1 = X.shape[1]

    def truncated(vector):
        return _truncated_nb_loglik(y_pos, X_pos, vector[:q1], float(np.exp(vector[q1])))

    start = np.concatenate([_log_linear_start(y_pos, X_pos), [0.0]])
    count_part = _maximize(truncated, start, int(pos.sum()), options)
    coef = RegressionCoefficients(beta=count_part.x[:q1], gamma=gamma, log_r=float(count_part.x[q1]))
    logistic, _ = hnb_loglik_parts(y, X, coef, Z)
    trace = tuple(logistic + t for t in count_part.trace)
    return RegressionFit.build(coef, logistic + count_part.loglik, Flavor.HNB,
                               logistic_ok and count_part.converged, y.size, trace)


def fit_regression(y, X, Z=None, flavor: Flavor = Flavor.ZINB,
                   options: Optional[FitOptions] = None) -> RegressionFit:
    """Local maximizer of the flavor's log-likelihood.

    ``Z`` defaults to ``X`` for the zero model (the HNB regression shares its
    design between both parts); the NB flavor has no zero model.
    """
    options = options or FitOptions()
    flavor = Flavor(flavor)
    y, X, Z = _as_design(y, X, Z)
    if flavor is Flavor.NB:
        Z = np.empty((y.size, 0))
    elif Z is None:
        Z = X
    _check_data(y, X, Z, flavor)

    if flavor is Flavor.HNB and options.factorize_hurdle:
        fit = _fit_hurdle_factorized(y, X, Z, options)
    else:
        q1, q2 = X.shape[1], Z.shape[1]

        def loglik(vector):
            coef = RegressionCoefficients.from_vector(vector, q1, q2)
            return flavored_loglik(flavor, y, X, Z, coef)

        result = _maximize(loglik, _initial_coefficients(y, X, Z, flavor), y.size, options)
        coef = RegressionCoefficients.from_vector(result.x, q1, q2)
        zero_weight = float(np.max(expit(Z @ coef.gamma))) if q2 else 0.0
        fit = RegressionFit.build(coef, result.loglik, flavor, result.converged, y.size,
                                  result.trace, zero_weight)

    logger.debug("%s fit: loglik=%.4f aic=%.4f converged=%s", flavor.value, fit.loglik, fit.aic,
                 fit.converged)
    return fit


def fit_intercept_only(y, flavor: Flavor = Flavor.ZINB, options: Optional[FitOptions] = None) -> RegressionFit:
    """Intercept-only fit, treating the variable on its own."""
    y = np.asarray(y)
    if y.size < 3:
        raise DegenerateDataError("intercept-only fits need at least 3 observations")
    ones = np.ones((y.size, 1))
    return fit_regression(y, ones, None if Flavor(flavor) is Flavor.NB else ones, flavor, options)


def aic(fit: RegressionFit) -> float:
    if not fit.converged:
        logger.warning("AIC of a non-converged %s fit", fit.flavor.value)
    return 2 * fit.n_params - 2 * fit.loglik


def simulate_regression(fit: RegressionFit, X, Z=None, seed=None) -> np.ndarray:
    """One response per covariate row drawn from the fitted model."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mu, pi = fit.predict(X, Z)
    return draw_counts(mu, fit.coefficients.r, pi, fit.flavor, rng)
