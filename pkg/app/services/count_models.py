"""NB, zero-inflated NB and hurdle NB marginals: log-space pmfs and exact samplers."""
import logging
from typing import Union

import numpy as np
from pydantic import ValidationError
from scipy.special import gammaln, xlogy
from scipy.stats import nbinom

from app.models.params import CountParams, Flavor
from app.utils.errors import DegenerateTruncationError, InvalidParameterError

logger = logging.getLogger(__name__)

ZT_RETRY_CAP = 1_000_000

ArrayLike = Union[int, float, np.ndarray]


def count_params(mu: float, r: float, pi: float = 0.0, flavor: Flavor = Flavor.NB) -> CountParams:
    """Build a CountParams, reporting bad values as InvalidParameterError."""
    try:
        return CountParams(mu=mu, r=r, pi=pi, flavor=flavor)
    except ValidationError as exc:
        raise InvalidParameterError(str(exc)) from exc


def _check_kernel(mu, r) -> None:
    mu = np.asarray(mu, dtype=float)
    r = np.asarray(r, dtype=float)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(r))):
        raise InvalidParameterError("NB mean and dispersion must be finite")
    if np.any(mu <= 0) or np.any(r <= 0):
        raise InvalidParameterError("NB mean and dispersion must be positive")


def _check_counts(y) -> np.ndarray:
    y = np.asarray(y)
    if np.any(y < 0):
        raise InvalidParameterError("counts must be nonnegative")
    if not np.all(np.isfinite(y)) or np.any(y != np.floor(y)):
        raise InvalidParameterError("counts must be integers")
    return y.astype(float)


def _scalar_or_array(values: np.ndarray, like) -> ArrayLike:
    return float(values) if np.ndim(like) == 0 else values


def nb_logpmf(y, mu, r) -> np.ndarray:
    """Vectorized NB log-pmf with mean ``mu`` and dispersion ``r`` (log-gamma form)."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    r = np.asarray(r, dtype=float)
    return (gammaln(y + r) - gammaln(r) - gammaln(y + 1)
            - r * np.log1p(mu / r)
            + xlogy(y, mu / (mu + r)))


def nb_log_zero(mu, r) -> np.ndarray:
    """ln NB(0; mu, r) = -r ln(1 + mu/r)."""
    return -np.asarray(r, dtype=float) * np.log1p(np.asarray(mu, dtype=float) / r)


def log_truncation_mass(mu, r) -> np.ndarray:
    """ln(1 - NB(0)), raising when the positive mass underflows."""
    positive_mass = -np.expm1(nb_log_zero(mu, r))
    if np.any(positive_mass <= 0):
        raise DegenerateTruncationError("1 - NB(0) underflows; zero-truncated NB undefined")
    return np.log(positive_mass)


def nb_log_pmf(y: ArrayLike, params: CountParams) -> ArrayLike:
    if params.flavor is not Flavor.NB:
        raise InvalidParameterError(f"nb_log_pmf needs NB parameters, got {params.flavor.value}")
    _check_kernel(params.mu, params.r)
    y_arr = _check_counts(y)
    return _scalar_or_array(nb_logpmf(y_arr, params.mu, params.r), y)


def nb_pmf(y: ArrayLike, params: CountParams) -> ArrayLike:
    return _scalar_or_array(np.exp(nb_log_pmf(np.asarray(y), params)), y)


def zinb_log_pmf(y: ArrayLike, params: CountParams) -> ArrayLike:
    _check_kernel(params.mu, params.r)
    y_arr = _check_counts(y)
    pi = params.pi
    with np.errstate(divide="ignore"):
        log_zero = np.log(pi + (1 - pi) * np.exp(nb_log_zero(params.mu, params.r)))
        log_positive = np.log1p(-pi) + nb_logpmf(y_arr, params.mu, params.r)
    return _scalar_or_array(np.where(y_arr == 0, log_zero, log_positive), y)


def zinb_pmf(y: ArrayLike, params: CountParams) -> ArrayLike:
    _check_kernel(params.mu, params.r)
    y_arr = _check_counts(y)
    pi = params.pi
    nb = np.exp(nb_logpmf(y_arr, params.mu, params.r))
    return _scalar_or_array(np.where(y_arr == 0, pi + (1 - pi) * nb, (1 - pi) * nb), y)


def hnb_log_pmf(y: ArrayLike, params: CountParams) -> ArrayLike:
    _check_kernel(params.mu, params.r)
    y_arr = _check_counts(y)
    log_trunc = log_truncation_mass(params.mu, params.r)
    pi = params.pi
    with np.errstate(divide="ignore"):
        log_positive = np.log1p(-pi) + nb_logpmf(y_arr, params.mu, params.r) - log_trunc
        log_zero = np.log(pi)
    return _scalar_or_array(np.where(y_arr == 0, log_zero, log_positive), y)


def hnb_pmf(y: ArrayLike, params: CountParams) -> ArrayLike:
    """Hurdle NB pmf; P(Y=0) is pi_H exactly, positives follow the zero-truncated NB."""
    _check_kernel(params.mu, params.r)
    y_arr = _check_counts(y)
    log_trunc = log_truncation_mass(params.mu, params.r)
    positive = (1 - params.pi) * np.exp(nb_logpmf(y_arr, params.mu, params.r) - log_trunc)
    return _scalar_or_array(np.where(y_arr == 0, params.pi, positive), y)


def flavored_pmf(y: ArrayLike, params: CountParams) -> ArrayLike:
    if params.flavor is Flavor.ZINB:
        return zinb_pmf(y, params)
    if params.flavor is Flavor.HNB:
        return hnb_pmf(y, params)
    return nb_pmf(y, params)


def count_mean(params: CountParams) -> float:
    if params.flavor is Flavor.ZINB:
        return (1 - params.pi) * params.mu
    if params.flavor is Flavor.HNB:
        return float((1 - params.pi) * params.mu / np.exp(log_truncation_mass(params.mu, params.r)))
    return params.mu


def _draw_nb(mu: np.ndarray, r, rng: np.random.Generator) -> np.ndarray:
    # numpy counts failures before r successes: mean r(1-p)/p = mu for p = r/(r+mu)
    return rng.negative_binomial(r, r / (r + mu))


def _draw_zero_truncated_nb(mu: np.ndarray, r, rng: np.random.Generator) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    r = np.broadcast_to(np.asarray(r, dtype=float), mu.shape)
    log_nb0 = nb_log_zero(mu, r)
    positive_mass = -np.expm1(log_nb0)
    if np.any(positive_mass <= 0):
        raise DegenerateTruncationError("1 - NB(0) underflows; cannot sample the truncated NB")

    out = np.zeros(mu.shape, dtype=np.int64)
    pending = np.arange(mu.size)
    draws = 0
    while pending.size and draws < ZT_RETRY_CAP:
        sample = _draw_nb(mu[pending], r[pending], rng)
        draws += pending.size
        accepted = sample > 0
        out[pending[accepted]] = sample[accepted]
        pending = pending[~accepted]

    if pending.size:
        logger.debug("truncated NB: %d draws left after %d rejections, using inverse CDF",
                     pending.size, draws)
        mu_p, r_p = mu[pending], r[pending]
        q = np.exp(log_nb0[pending]) + rng.random(pending.size) * positive_mass[pending]
        inverse = nbinom.ppf(q, r_p, r_p / (r_p + mu_p))
        out[pending] = np.maximum(inverse, 1).astype(np.int64)
    return out


def draw_counts(mu, r, pi, flavor: Flavor, rng: np.random.Generator) -> np.ndarray:
    """Draw one count per entry of ``mu`` (and broadcast ``pi``) from the flavored law."""
    mu = np.asarray(mu, dtype=float)
    _check_kernel(mu, r)
    if flavor is Flavor.NB:
        return _draw_nb(mu, r, rng)

    pi = np.broadcast_to(np.asarray(pi, dtype=float), mu.shape)
    if flavor is Flavor.ZINB:
        y = _draw_nb(mu, r, rng)
        structural = rng.random(mu.shape) < pi
        y[structural] = 0
        return y

    r = np.broadcast_to(np.asarray(r, dtype=float), mu.shape)
    y = np.zeros(mu.shape, dtype=np.int64)
    positive = rng.random(mu.shape) >= pi
    if np.any(positive):
        y[positive] = _draw_zero_truncated_nb(mu[positive], r[positive], rng)
    return y


def sample_count(n: int, params: CountParams, seed: int) -> np.ndarray:
    """n i.i.d. draws from the flavored distribution, reproducible given ``seed``."""
    if n < 1:
        raise InvalidParameterError("sample size must be positive")
    rng = np.random.default_rng(seed)
    return draw_counts(np.full(n, params.mu), params.r, params.pi, params.flavor, rng)
