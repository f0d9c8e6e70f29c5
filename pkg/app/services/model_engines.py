"""Fit/simulate engines compared by the evaluation protocols.

Each engine is trained on an n x p count matrix (plus one covariate column per
variable for ``hnb_cov``) and then simulates new rows from the fitted model.
"""
import logging
from typing import Dict, List, Optional, Type

import numpy as np

from app.models.params import FitOptions, Flavor
from app.services.latent_copula import PHI4_TOL, LatentCopulaModel, fit_tlnpn, sample_tlnpn
from app.services.mle_fit import (RegressionFit, fit_intercept_only, fit_regression,
                                  simulate_regression)
from app.utils.errors import InvalidParameterError, ShapeError

logger = logging.getLogger(__name__)


def _design(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.size), x])


class CountModelEngine:
    tag = "base"
    needs_covariates = False

    def __init__(self, options: Optional[FitOptions] = None):
        self.options = options or FitOptions()
        self.is_fitted = False

    def fit(self, Y: np.ndarray, X: Optional[np.ndarray] = None) -> "CountModelEngine":
        raise NotImplementedError

    def simulate(self, n: int, X: Optional[np.ndarray] = None, seed=None) -> np.ndarray:
        raise NotImplementedError

    def _require_fitted(self) -> None:
        if not self.is_fitted:
            raise InvalidParameterError(f"engine {self.tag!r} must be fitted before simulating")

    @staticmethod
    def _rng(seed) -> np.random.Generator:
        return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


class IndependentMarginalEngine(CountModelEngine):
    """Intercept-only fits per column; columns are simulated independently."""

    flavor = Flavor.HNB

    def __init__(self, options: Optional[FitOptions] = None):
        super().__init__(options)
        self.fits: List[Optional[RegressionFit]] = []

    def _fit_column(self, y: np.ndarray) -> Optional[RegressionFit]:
        if np.all(y == 0):
            return None
        if self.flavor is Flavor.ZINB and not np.any(y == 0):
            return fit_intercept_only(y, Flavor.NB, self.options)
        return fit_intercept_only(y, self.flavor, self.options)

    def fit(self, Y, X=None):
        Y = np.asarray(Y)
        self.fits = [self._fit_column(Y[:, j]) for j in range(Y.shape[1])]
        self.is_fitted = True
        return self

    def simulate(self, n, X=None, seed=None):
        self._require_fitted()
        rng = self._rng(seed)
        ones = np.ones((n, 1))
        columns = [np.zeros(n, dtype=np.int64) if fit is None else simulate_regression(fit, ones, seed=rng)
                   for fit in self.fits]
        return np.column_stack(columns)

    @property
    def aic(self) -> float:
        return float(sum(fit.aic for fit in self.fits if fit is not None))


class HurdleEngine(IndependentMarginalEngine):
    tag = "hnb"


class ZeroInflatedEngine(IndependentMarginalEngine):
    tag = "zinb"
    flavor = Flavor.ZINB


class HurdleCovariateEngine(CountModelEngine):
    """Per-column HNB regression on [1, x_j]; simulation uses the supplied covariates."""

    tag = "hnb_cov"
    needs_covariates = True

    def __init__(self, options: Optional[FitOptions] = None):
        super().__init__(options)
        self.fits: List[Optional[RegressionFit]] = []
        self.covariate_zero_model: List[bool] = []

    @staticmethod
    def _check_covariates(Y_shape, X) -> np.ndarray:
        if X is None:
            raise InvalidParameterError("the covariate HNB engine needs covariates")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != Y_shape[1]:
            raise ShapeError(f"expected one covariate column per variable, got {X.shape}")
        return X

    def fit(self, Y, X=None):
        Y = np.asarray(Y)
        X = self._check_covariates(Y.shape, X)
        self.fits = []
        self.covariate_zero_model = []
        for j in range(Y.shape[1]):
            y = Y[:, j]
            if np.all(y == 0):
                self.fits.append(None)
                self.covariate_zero_model.append(False)
                continue
            design = _design(X[:, j])
            # a single-class zero indicator has no finite logistic slope
            both_classes = bool(np.any(y == 0))
            zero_design = design if both_classes else np.ones((y.size, 1))
            self.fits.append(fit_regression(y, design, zero_design, Flavor.HNB, self.options))
            self.covariate_zero_model.append(both_classes)
        self.is_fitted = True
        return self

    def simulate(self, n, X=None, seed=None):
        self._require_fitted()
        X = self._check_covariates((n, len(self.fits)), X)
        if X.shape[0] != n:
            raise ShapeError(f"{X.shape[0]} covariate rows for {n} simulated rows")
        rng = self._rng(seed)
        columns = []
        for j, fit in enumerate(self.fits):
            if fit is None:
                columns.append(np.zeros(n, dtype=np.int64))
                continue
            design = _design(X[:, j])
            zero_design = design if self.covariate_zero_model[j] else np.ones((n, 1))
            columns.append(simulate_regression(fit, design, zero_design, rng))
        return np.column_stack(columns)

    @property
    def aic(self) -> float:
        return float(sum(fit.aic for fit in self.fits if fit is not None))


class CopulaEngine(CountModelEngine):
    tag = "tlnpn"

    def __init__(self, options: Optional[FitOptions] = None, n_jobs: int = 1, tol: float = PHI4_TOL):
        super().__init__(options)
        self.n_jobs = n_jobs
        self.tol = tol
        self.model: Optional[LatentCopulaModel] = None

    def fit(self, Y, X=None):
        self.model = fit_tlnpn(Y, n_jobs=self.n_jobs, tol=self.tol)
        self.is_fitted = True
        return self

    def simulate(self, n, X=None, seed=None):
        self._require_fitted()
        return sample_tlnpn(self.model, n, self._rng(seed))


ENGINES: Dict[str, Type[CountModelEngine]] = {
    engine.tag: engine for engine in (HurdleEngine, HurdleCovariateEngine, ZeroInflatedEngine, CopulaEngine)
}


def build_engine(tag: str, options: Optional[FitOptions] = None, n_jobs: int = 1,
                 tol: float = PHI4_TOL) -> CountModelEngine:
    if tag not in ENGINES:
        raise InvalidParameterError(f"unknown model {tag!r}; expected one of {sorted(ENGINES)}")
    if tag == CopulaEngine.tag:
        return CopulaEngine(options, n_jobs=n_jobs, tol=tol)
    return ENGINES[tag](options)


def _describe_fit(name: str, fit: Optional[RegressionFit]) -> Dict[str, object]:
    if fit is None:
        return {"variable": name, "all_zero": True}
    coef = fit.coefficients
    return {"variable": name, "flavor": fit.flavor.value, "beta": coef.beta.tolist(),
            "gamma": coef.gamma.tolist(), "r": coef.r, "loglik": fit.loglik, "aic": fit.aic,
            "converged": fit.converged}


def describe_engine(engine: CountModelEngine, names: Optional[List[str]] = None) -> Dict[str, object]:
    """JSON-ready summary of a fitted engine."""
    engine._require_fitted()
    if isinstance(engine, CopulaEngine):
        model = engine.model
        return {"model": engine.tag, "sigma_hat": model.sigma_hat.tolist(),
                "delta_hat": model.delta_hat.tolist(), "zero_fractions": model.zero_fractions.tolist(),
                "clamped_pairs": [list(pair) for pair in model.clamped_pairs]}
    fits = engine.fits
    names = names or [f"y{j + 1}" for j in range(len(fits))]
    return {"model": engine.tag, "aic": engine.aic,
            "variables": [_describe_fit(name, fit) for name, fit in zip(names, fits)]}
