"""Experiment configuration: TOML files validated into ExperimentConfig."""
import hashlib
import itertools
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.models.params import CorrelationKind, Flavor, Transform
from app.utils.errors import ConfigValidationError

logger = logging.getLogger(__name__)

MODEL_TAGS = ("hnb", "hnb_cov", "zinb", "tlnpn")


class ExperimentKind(str, Enum):
    SETTING_ONE = "SettingOne"
    SETTING_ONE_DEFLATION = "SettingOneDeflation"
    SETTING_TWO = "SettingTwo"
    SETTING_THREE = "SettingThree"
    REAL_DATA = "RealData"


GRID_KEYS = {
    ExperimentKind.SETTING_ONE: {"flavor", "zero_target", "beta1", "gamma1"},
    ExperimentKind.SETTING_ONE_DEFLATION: {"pi_h"},
    ExperimentKind.SETTING_TWO: {"beta1", "gamma0", "gamma1", "rho", "corr_kind"},
    ExperimentKind.SETTING_THREE: {"rho", "zero_target", "transform", "corr_kind"},
    ExperimentKind.REAL_DATA: set(),
}


class GridSpec(BaseModel):
    """Explicit value lists; the experiment runs their Cartesian product."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    beta1: Optional[List[float]] = None
    gamma0: Optional[List[float]] = None
    gamma1: Optional[List[float]] = None
    rho: Optional[List[float]] = None
    zero_target: Optional[List[float]] = None
    transform: Optional[List[Transform]] = None
    corr_kind: Optional[List[CorrelationKind]] = None
    pi_h: Optional[List[float]] = None
    flavor: Optional[List[Flavor]] = None

    @field_validator("*")
    @classmethod
    def _nonempty(cls, value):
        if value is not None and len(value) == 0:
            raise ValueError("grid lists must not be empty")
        return value

    @field_validator("zero_target", "pi_h")
    @classmethod
    def _open_unit_interval(cls, value):
        if value is not None and not all(0 < v < 1 for v in value):
            raise ValueError("proportions must lie in (0, 1)")
        return value

    @field_validator("flavor")
    @classmethod
    def _zero_modified_only(cls, value):
        if value is not None and Flavor.NB in value:
            raise ValueError("simulated data are ZINB or HNB")
        return value

    def keys(self) -> List[str]:
        return [name for name, value in self if value is not None]

    def points(self) -> List[Dict[str, Any]]:
        keys = self.keys()
        values = [getattr(self, key) for key in keys]
        return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: ExperimentKind
    replications: int = Field(default=10, ge=1)
    folds: int = Field(default=5, ge=2)
    n_splits: int = Field(default=10, ge=1)
    master_seed: int = Field(default=0, ge=0)
    output: str = "results"
    models: List[str] = Field(default_factory=lambda: ["hnb", "tlnpn"])
    order: int = 2
    n_jobs: int = 1
    dataset: Optional[str] = None
    standin: Optional[Literal["qmp", "scrna"]] = None
    rescale_exponent: Optional[float] = Field(default=None, gt=0, le=1)
    corr_kind: CorrelationKind = CorrelationKind.AR
    n: Optional[int] = Field(default=None, ge=2)
    p: Optional[int] = Field(default=None, ge=1)
    sim_n: Optional[int] = Field(default=None, ge=1)
    bridge_tol: float = Field(default=1e-6, gt=0)
    grid: GridSpec = Field(default_factory=GridSpec)

    @field_validator("order")
    @classmethod
    def _order(cls, value):
        if value not in (1, 2):
            raise ValueError("order must be 1 or 2")
        return value

    @field_validator("models")
    @classmethod
    def _known_models(cls, value):
        unknown = sorted(set(value) - set(MODEL_TAGS))
        if unknown or not value:
            raise ValueError(f"models must be a nonempty subset of {MODEL_TAGS}, got unknown {unknown}")
        return value

    @model_validator(mode="after")
    def _check_grid(self) -> "ExperimentConfig":
        keys = set(self.grid.keys())
        allowed = GRID_KEYS[self.experiment]
        if self.experiment is not ExperimentKind.REAL_DATA and not keys:
            raise ValueError(f"{self.experiment.value} needs a nonempty grid")
        if keys - allowed:
            raise ValueError(f"grid keys {sorted(keys - allowed)} do not apply to {self.experiment.value}")

        kinds = self.grid.corr_kind or [self.corr_kind]
        for rho in self.grid.rho or []:
            if CorrelationKind.AR in kinds and not abs(rho) < 1:
                raise ValueError(f"AR structure needs |rho| < 1, got {rho}")
            if CorrelationKind.GD in kinds and not 0 < rho < 1:
                raise ValueError(f"GD structure needs 0 < rho < 1, got {rho}")

        needs_data = self.experiment in (ExperimentKind.SETTING_THREE, ExperimentKind.REAL_DATA)
        if needs_data and self.dataset is None and self.standin is None:
            raise ValueError(f"{self.experiment.value} needs a dataset path or a stand-in name")
        if "hnb_cov" in self.models and self.experiment is not ExperimentKind.SETTING_TWO:
            raise ValueError("the covariate HNB model only applies to SettingTwo")
        return self

    def grid_points(self) -> List[Dict[str, Any]]:
        points = self.grid.points()
        return points if points else [{}]


def parse_config(raw: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    merged = {**raw, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigValidationError(str(exc)) from exc


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as handle:
            raw = tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigValidationError(f"config file {path} does not exist") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigValidationError(f"{path}: {exc}") from exc
    config = parse_config(raw, overrides)
    logger.info("loaded %s config from %s", config.experiment.value, path)
    return config


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form; output location and worker count do not count."""
    payload = config.model_dump(mode="json", exclude={"output", "n_jobs"})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
