import numpy as np
import pytest
from scipy.special import expit

from app.models.params import CorrelationKind, CorrelationSpec, Flavor, Setting, SettingConfig
from app.services.synth import (STANDIN_PROFILES, ar_correlation, calibrate_gamma0,
                                correlation_matrix, gd_covariance, gen_setting_one,
                                gen_setting_three, gen_setting_two, gen_standin_dataset,
                                random_orthogonal)
from app.utils.data_loader import Dataset, zero_proportion_quantiles
from app.utils.errors import InfeasibleTargetError, InvalidParameterError


def test_ar_structure():
    sigma = ar_correlation(CorrelationSpec(kind=CorrelationKind.AR, rho=0.5, p=4))
    assert sigma[0, 3] == pytest.approx(0.125)
    assert sigma[2, 1] == pytest.approx(0.5)
    np.testing.assert_array_equal(np.diag(sigma), 1.0)


def test_random_orthogonal_is_orthogonal():
    q = random_orthogonal(6, seed=3)
    np.testing.assert_allclose(q @ q.T, np.eye(6), atol=1e-12)
    np.testing.assert_array_equal(q, random_orthogonal(6, seed=3))


@pytest.mark.parametrize("rho", [0.01, 0.3, 0.9])
def test_gd_covariance_has_trace_five(rho):
    spec = CorrelationSpec(kind=CorrelationKind.GD, rho=rho, p=5, orthogonal_seed=1)
    sigma = gd_covariance(spec)
    assert np.trace(sigma) == pytest.approx(5.0)
    eigenvalues = np.sort(np.linalg.eigvalsh(sigma))[::-1]
    np.testing.assert_allclose(eigenvalues[1:] / eigenvalues[:-1], rho, rtol=1e-6)


def test_gd_as_correlation_has_unit_diagonal():
    spec = CorrelationSpec(kind=CorrelationKind.GD, rho=0.7, p=5)
    np.testing.assert_allclose(np.diag(correlation_matrix(spec, unit_diagonal=True)), 1.0)


def test_wrong_structure_rejected():
    with pytest.raises(InvalidParameterError):
        ar_correlation(CorrelationSpec(kind=CorrelationKind.GD, rho=0.5, p=3))
    with pytest.raises(ValueError):
        CorrelationSpec(kind=CorrelationKind.GD, rho=1.0, p=3)


def test_hurdle_calibration_without_slope_is_logit():
    config = SettingConfig(setting=Setting.ONE, flavor=Flavor.HNB, gamma1=0.0)
    assert expit(calibrate_gamma0(config, 0.3, seed=0)) == pytest.approx(0.3)


@pytest.mark.parametrize("flavor", [Flavor.ZINB, Flavor.HNB])
def test_calibrated_population_hits_zero_target(flavor):
    config = SettingConfig(setting=Setting.ONE, flavor=flavor, n=20_000)
    gamma0 = calibrate_gamma0(config, 0.4, seed=1)
    y, x = gen_setting_one(config.model_copy(update={"gamma0": gamma0}), seed=2)
    assert y.shape == x.shape == (20_000,)
    assert np.mean(y == 0) == pytest.approx(0.4, abs=0.015)


def test_unreachable_zero_target_raises():
    # the NB part alone already produces more than 20% zeros under these defaults
    config = SettingConfig(setting=Setting.ONE, flavor=Flavor.ZINB)
    with pytest.raises(InfeasibleTargetError):
        calibrate_gamma0(config, 0.2, seed=0)


def test_deflation_setting_defaults():
    config = SettingConfig(setting=Setting.ONE_DEFLATION, gamma0=-1.0)
    y, _ = gen_setting_one(config, seed=0)
    assert y.shape == (700,)
    assert np.mean(y == 0) == pytest.approx(expit(-1.0), abs=0.05)


def test_setting_two_is_reproducible():
    config = SettingConfig(setting=Setting.TWO, beta1=2.0,
                           corr={"kind": "GD", "rho": 0.3, "p": 5})
    y, x = gen_setting_two(config, seed=5)
    assert y.shape == x.shape == (1200, 5)
    y_again, x_again = gen_setting_two(config, seed=5)
    np.testing.assert_array_equal(y, y_again)
    np.testing.assert_array_equal(x, x_again)
    assert np.mean(y == 0) == pytest.approx(0.1, abs=0.02)


def test_setting_three_reuses_source_values():
    rng = np.random.default_rng(0)
    values = rng.poisson(3, (200, 8))
    values[:40, 0] = 0
    source = Dataset.from_array(values)
    config = SettingConfig(setting=Setting.THREE, zero_target=0.2, n=500)
    draws = gen_setting_three(config, seed=1, source=source)
    assert draws.shape == (500, 5)
    allowed = set(np.unique(values))
    assert set(np.unique(draws)) <= allowed


def test_setting_three_sqrt_shrinks_values():
    rng = np.random.default_rng(0)
    source = Dataset.from_array(rng.negative_binomial(1, 0.02, (150, 6)))
    plain = gen_setting_three(SettingConfig(setting=Setting.THREE), seed=3, source=source)
    rooted = gen_setting_three(SettingConfig(setting=Setting.THREE, transform="sqrt"), seed=3,
                               source=source)
    assert rooted.max() < plain.max()


def test_setting_three_needs_a_source():
    with pytest.raises(InvalidParameterError):
        gen_setting_three(SettingConfig(setting=Setting.THREE), seed=0)


@pytest.mark.parametrize("kind", sorted(STANDIN_PROFILES))
def test_standin_matches_zero_fraction_quartiles(kind):
    n, p, quartiles, _ = STANDIN_PROFILES[kind]
    data = gen_standin_dataset(kind, seed=0)
    assert data.values.shape == (n, p)
    assert data.is_integral
    np.testing.assert_allclose(zero_proportion_quantiles(data), quartiles, atol=0.5 / n + 1e-12)
    assert data.provenance == (f"standin:{kind}:seed=0",)


def test_unknown_standin_rejected():
    with pytest.raises(InvalidParameterError):
        gen_standin_dataset("bulk")
