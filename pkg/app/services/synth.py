"""Synthetic populations for the simulation settings and the latent correlation structures."""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from app.models.params import (CorrelationKind, CorrelationSpec, Flavor, Setting, SettingConfig,
                               Transform)
from app.services.count_models import draw_counts, nb_log_zero
from app.services.latent_copula import sample_from_marginals
from app.utils.data_loader import (Dataset, load_counts_csv, rescale_power,
                                   select_by_zero_proportion)
from app.utils.errors import InfeasibleTargetError, InvalidParameterError
from app.utils.linalg import cov_to_corr, sample_mvn

logger = logging.getLogger(__name__)

__all__ = [
    "ar_correlation", "gd_covariance", "random_orthogonal", "correlation_matrix", "sample_mvn",
    "gen_setting_one", "calibrate_gamma0", "gen_setting_two", "gen_setting_three",
    "gen_standin_dataset", "STANDIN_PROFILES",
]

CALIBRATION_DRAWS = 100_000
_GAMMA0_BRACKET = (-40.0, 40.0)

# (n, p, zero-fraction quartiles incl. the maximum, variable prefix)
STANDIN_PROFILES = {
    "qmp": (135, 101, (0.037, 0.289, 0.578, 0.793), "genus"),
    "scrna": (265, 329, (0.411, 0.657, 0.811, 0.898), "gene"),
}


def ar_correlation(spec: CorrelationSpec) -> np.ndarray:
    if spec.kind is not CorrelationKind.AR:
        raise InvalidParameterError(f"expected an AR spec, got {spec.kind.value}")
    lags = np.abs(np.subtract.outer(np.arange(spec.p), np.arange(spec.p)))
    return np.power(spec.rho, lags, dtype=float)


def random_orthogonal(p: int, seed) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian matrix with sign-corrected R."""
    if p < 1:
        raise InvalidParameterError("dimension must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def gd_eigenvalues(rho: float, p: int) -> np.ndarray:
    j = np.arange(1, p + 1)
    return 5 * (rho ** (j - 1) - rho ** j) / (1 - rho ** p)


def gd_covariance(spec: CorrelationSpec) -> np.ndarray:
    """Gamma diag(nu) Gamma^T with geometrically decaying eigenvalues summing to 5."""
    if spec.kind is not CorrelationKind.GD:
        raise InvalidParameterError(f"expected a GD spec, got {spec.kind.value}")
    gamma = random_orthogonal(spec.p, spec.orthogonal_seed)
    sigma = (gamma * gd_eigenvalues(spec.rho, spec.p)) @ gamma.T
    return (sigma + sigma.T) / 2


def correlation_matrix(spec: CorrelationSpec, unit_diagonal: bool = False) -> np.ndarray:
    if spec.kind is CorrelationKind.AR:
        return ar_correlation(spec)
    sigma = gd_covariance(spec)
    return cov_to_corr(sigma) if unit_diagonal else sigma


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _link_draws(x: np.ndarray, config: SettingConfig, rng: np.random.Generator) -> np.ndarray:
    mu = np.exp(config.beta0 + config.beta1 * x)
    pi = expit(config.gamma0 + config.gamma1 * x)
    return draw_counts(mu, config.r, pi, config.flavor, rng)


def gen_setting_one(config: SettingConfig, seed) -> Tuple[np.ndarray, np.ndarray]:
    if config.setting not in (Setting.ONE, Setting.ONE_DEFLATION):
        raise InvalidParameterError(f"setting {config.setting.value} is not a one-covariate setting")
    rng = _rng(seed)
    x = rng.standard_normal(config.n)
    return _link_draws(x, config, rng), x


def _expected_zero_probability(config: SettingConfig, x: np.ndarray):
    nb_zero = np.exp(nb_log_zero(np.exp(config.beta0 + config.beta1 * x), config.r))

    def zero_probability(gamma0: float) -> float:
        pi = expit(gamma0 + config.gamma1 * x)
        if config.flavor is Flavor.HNB:
            return float(pi.mean())
        return float((pi + (1 - pi) * nb_zero).mean())

    return zero_probability


def calibrate_gamma0(config: SettingConfig, target_zero: float, seed) -> float:
    """gamma0 at which the covariate-averaged zero probability equals ``target_zero``."""
    if not 0 < target_zero < 1:
        raise InvalidParameterError(f"zero target must lie in (0, 1), got {target_zero}")
    if config.flavor is Flavor.HNB and config.gamma1 == 0:
        return float(logit(target_zero))

    x = _rng(seed).standard_normal(CALIBRATION_DRAWS)
    zero_probability = _expected_zero_probability(config, x)
    low, high = _GAMMA0_BRACKET
    floor, ceiling = zero_probability(low), zero_probability(high)
    if not floor < target_zero < ceiling:
        raise InfeasibleTargetError(
            f"zero proportion {target_zero:.3f} is outside the reachable range "
            f"[{floor:.3f}, {ceiling:.3f}] for {config.flavor.value}")
    gamma0 = brentq(lambda g: zero_probability(g) - target_zero, low, high, xtol=1e-10)
    logger.debug("calibrated gamma0=%.4f for zero target %.3f", gamma0, target_zero)
    return float(gamma0)


def gen_setting_two(config: SettingConfig, seed) -> Tuple[np.ndarray, np.ndarray]:
    if config.setting is not Setting.TWO:
        raise InvalidParameterError("gen_setting_two needs a Setting Two config")
    rng = _rng(seed)
    x = sample_mvn(config.n, correlation_matrix(config.corr), rng)
    return _link_draws(x, config, rng), x


def _setting_three_targets(config: SettingConfig):
    if config.zero_targets is not None:
        return list(config.zero_targets)
    if config.zero_target is not None:
        return [config.zero_target] * config.p
    return None


def gen_setting_three(config: SettingConfig, seed, source: Optional[Dataset] = None) -> np.ndarray:
    """Latent Gaussian rows mapped through the selected source columns' empirical quantiles."""
    if config.setting is not Setting.THREE:
        raise InvalidParameterError("gen_setting_three needs a Setting Three config")
    if source is None:
        if config.marginal_source is None:
            raise InvalidParameterError("Setting Three needs a marginal source dataset")
        source = load_counts_csv(config.marginal_source)
    if config.transform is Transform.SQRT:
        source = rescale_power(source, 0.5)

    source = select_by_zero_proportion(source, _setting_three_targets(config), config.p)
    latent = sample_mvn(config.n, correlation_matrix(config.corr, unit_diagonal=True), _rng(seed))
    marginals = [np.sort(column) for column in source.values.T]
    return sample_from_marginals(latent, marginals)


def _standin_zero_fractions(p: int, quartiles) -> np.ndarray:
    knots = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    values = np.concatenate([[0.0], quartiles])
    return np.interp(np.linspace(0, 1, p), knots, values)


def gen_standin_dataset(kind: str, seed: int = 0) -> Dataset:
    """Synthetic count table with the named dataset's shape and zero-fraction quartiles."""
    if kind not in STANDIN_PROFILES:
        raise InvalidParameterError(f"unknown stand-in dataset {kind!r}; "
                                    f"expected one of {sorted(STANDIN_PROFILES)}")
    n, p, quartiles, prefix = STANDIN_PROFILES[kind]
    rng = np.random.default_rng(seed)
    zeros = np.rint(_standin_zero_fractions(p, quartiles) * n).astype(int)
    zeros = zeros[rng.permutation(p)]

    spec = CorrelationSpec(kind=CorrelationKind.GD, rho=0.8, p=p, orthogonal_seed=seed)
    latent = sample_mvn(n, cov_to_corr(gd_covariance(spec) + np.eye(p)), rng)

    values = np.zeros((n, p), dtype=np.int64)
    for j in range(p):
        order = np.argsort(latent[:, j], kind="stable")
        positives = order[zeros[j]:]
        mu = np.exp(rng.normal(3.0, 1.5))
        r = rng.uniform(0.3, 3.0)
        draws = draw_counts(np.full(positives.size, mu), r, 0.0, Flavor.HNB, rng)
        values[positives, j] = np.sort(draws)

    names = [f"{prefix}_{j + 1:03d}" for j in range(p)]
    return Dataset(values=values, variable_names=names, provenance=(f"standin:{kind}:seed={seed}",))
