import math

import pytest
from pydantic import ValidationError

from app.models.params import (CountParams, FitOptions, Flavor, Setting, SettingConfig)
from app.models.requests import DistanceRequest, FitRequest, ModelTag, SimulateRequest


def test_count_params_nb_has_no_zero_weight():
    params = CountParams(mu=2.0, r=1.0, pi=0.4)
    assert params.flavor is Flavor.NB
    assert params.pi == 0.0


def test_fit_options_defaults():
    options = FitOptions()
    assert options.factorize_hurdle
    with pytest.raises(ValidationError):
        FitOptions(max_iter=0)


def test_setting_defaults_are_filled():
    config = SettingConfig(setting=Setting.ONE)
    assert config.n == 500
    assert config.beta0 == pytest.approx(math.log(12))
    assert config.flavor is Flavor.ZINB

    two = SettingConfig(setting=Setting.TWO, p=3)
    assert two.corr.p == 3
    assert two.gamma0 == pytest.approx(math.log(1 / 9))


def test_setting_dimension_override_reaches_correlation():
    three = SettingConfig(setting=Setting.THREE, p=8)
    assert (three.p, three.corr.p) == (8, 8)
    assert three.corr.rho == pytest.approx(0.7)

    explicit = SettingConfig(setting=Setting.TWO, p=4, corr={"kind": "GD", "rho": 0.3})
    assert explicit.corr.p == 4
    with pytest.raises(ValidationError):
        SettingConfig(setting=Setting.TWO, p=4, corr={"kind": "AR", "rho": 0.3, "p": 6})


def test_setting_checks():
    with pytest.raises(ValidationError):
        SettingConfig(setting=Setting.ONE_DEFLATION, flavor=Flavor.ZINB)
    with pytest.raises(ValidationError):
        SettingConfig(setting=Setting.ONE, flavor=Flavor.NB)
    with pytest.raises(ValidationError):
        SettingConfig(setting=Setting.TWO, corr={"kind": "AR", "rho": 0.5, "p": 4}, p=5)


def test_fit_request():
    request = FitRequest(counts=[[0, 1], [2, 0]])
    assert request.model is ModelTag.TLNPN
    assert request.bridge_tol == 1e-6
    with pytest.raises(ValidationError):
        FitRequest(counts=[[0, 1], [2]])
    with pytest.raises(ValidationError):
        FitRequest(counts=[])


def test_simulate_request_bounds():
    assert SimulateRequest(counts=[[1]], n=5, model="hnb").model is ModelTag.HNB
    with pytest.raises(ValidationError):
        SimulateRequest(counts=[[1]], n=0)


def test_distance_request_order():
    with pytest.raises(ValidationError):
        DistanceRequest(x=[[1]], y=[[2]], order=3)
