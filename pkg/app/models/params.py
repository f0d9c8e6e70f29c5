import math
from enum import Enum
from typing import Any, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Flavor(str, Enum):
    NB = "NB"
    ZINB = "ZINB"
    HNB = "HNB"


class CountParams(BaseModel):
    """Parameters of one count marginal: NB mean, dispersion and zero weight."""

    model_config = ConfigDict(frozen=True)

    mu: float = Field(gt=0, allow_inf_nan=False)
    r: float = Field(gt=0, allow_inf_nan=False)
    pi: float = Field(default=0.0, ge=0, le=1)
    flavor: Flavor = Flavor.NB

    @model_validator(mode="before")
    @classmethod
    def _nb_has_no_zero_weight(cls, data: Any) -> Any:
        if isinstance(data, dict) and Flavor(data.get("flavor", Flavor.NB)) is Flavor.NB:
            data = {**data, "pi": 0.0}
        return data


class FitOptions(BaseModel):
    """Optimizer settings for the ZINB/HNB maximum-likelihood fits."""

    model_config = ConfigDict(frozen=True)

    max_iter: int = Field(default=500, ge=1)
    gtol: float = Field(default=1e-5, gt=0)
    ftol: float = Field(default=1e-9, gt=0)
    n_restarts: int = Field(default=5, ge=0)
    restart_scale: float = Field(default=0.5, gt=0)
    factorize_hurdle: bool = True
    seed: int = 0


class CorrelationKind(str, Enum):
    AR = "AR"
    GD = "GD"


class CorrelationSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: CorrelationKind = CorrelationKind.AR
    rho: float = 0.5
    p: int = Field(default=5, ge=1)
    orthogonal_seed: int = 0

    @model_validator(mode="after")
    def _check_rho(self) -> "CorrelationSpec":
        if self.kind is CorrelationKind.AR and not abs(self.rho) < 1:
            raise ValueError(f"AR structure needs |rho| < 1, got {self.rho}")
        if self.kind is CorrelationKind.GD and not 0 < self.rho < 1:
            raise ValueError(f"GD structure needs 0 < rho < 1, got {self.rho}")
        return self


class Setting(str, Enum):
    ONE = "One"
    ONE_DEFLATION = "OneDeflation"
    TWO = "Two"
    THREE = "Three"


class Transform(str, Enum):
    NONE = "none"
    SQRT = "sqrt"


# Published parameterizations of each simulation setting; explicit fields win.
SETTING_DEFAULTS = {
    Setting.ONE: dict(n=500, p=1, beta0=math.log(12), beta1=2.0, gamma0=0.0,
                      gamma1=2.0, r=0.5, flavor=Flavor.ZINB, zero_target=0.4),
    Setting.ONE_DEFLATION: dict(n=700, p=1, beta0=math.log(6 / 7), beta1=0.1,
                                gamma0=0.0, gamma1=0.0, r=2.0, flavor=Flavor.HNB),
    Setting.TWO: dict(n=1200, p=5, beta0=2.75, beta1=0.0, gamma0=math.log(1 / 9),
                      gamma1=0.0, r=6.0, flavor=Flavor.HNB,
                      corr=dict(kind="AR", rho=0.5, p=5)),
    Setting.THREE: dict(n=1200, p=5, beta0=0.0, beta1=0.0, gamma0=0.0, gamma1=0.0,
                        r=1.0, flavor=Flavor.HNB, zero_target=0.5,
                        corr=dict(kind="AR", rho=0.7, p=5)),
}


class SettingConfig(BaseModel):
    """One point of a simulation setting."""

    model_config = ConfigDict(frozen=True)

    setting: Setting
    n: int = Field(ge=1)
    p: int = Field(ge=1)
    beta0: float
    beta1: float
    gamma0: float
    gamma1: float
    r: float = Field(gt=0)
    corr: Optional[CorrelationSpec] = None
    flavor: Flavor = Flavor.HNB
    zero_target: Optional[float] = Field(default=None, gt=0, lt=1)
    zero_targets: Optional[List[float]] = None
    transform: Transform = Transform.NONE
    marginal_source: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _fill_setting_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "setting" not in data:
            return data
        defaults = SETTING_DEFAULTS[Setting(data["setting"])]
        merged = {**defaults, **{k: v for k, v in data.items() if v is not None}}
        given = data.get("corr")
        if given is None and "corr" in defaults:
            merged["corr"] = {**defaults["corr"], "p": merged["p"]}
        elif isinstance(given, dict):
            merged["corr"] = {**given, "p": given.get("p", merged["p"])}
        return merged

    @field_validator("zero_targets")
    @classmethod
    def _targets_in_unit_interval(cls, value):
        if value is not None and not all(0 <= t <= 1 for t in value):
            raise ValueError("zero targets must lie in [0, 1]")
        return value

    @model_validator(mode="after")
    def _check_setting(self) -> "SettingConfig":
        if self.setting in (Setting.TWO, Setting.THREE):
            if self.corr is None:
                raise ValueError(f"setting {self.setting.value} needs a correlation spec")
            if self.corr.p != self.p:
                raise ValueError("correlation dimension must equal p")
        if self.setting is Setting.ONE_DEFLATION and self.flavor is not Flavor.HNB:
            raise ValueError("the zero-deflation setting simulates HNB data")
        if self.flavor is Flavor.NB:
            raise ValueError("settings simulate ZINB or HNB data")
        return self
