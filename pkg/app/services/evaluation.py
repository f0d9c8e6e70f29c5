"""Held-out goodness of fit: k-fold cross-validation and repeated random splits."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import KFold

from app.models.params import FitOptions
from app.services.latent_copula import PHI4_TOL
from app.services.model_engines import ENGINES, build_engine
from app.utils.data_loader import Dataset
from app.utils.errors import (InvalidParameterError, ShapeError, UndefinedComparisonError,
                              ZeroCountError)
from app.utils.metrics import GoodnessOfFitMetrics

logger = logging.getLogger(__name__)

RECOVERABLE_ERRORS = (ZeroCountError, FloatingPointError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class FoldResult:
    replication: int
    fold: int
    model: str
    distance: float
    marginal: Tuple[float, ...] = ()
    corr_max_abs: float = float("nan")
    corr_mean_abs: float = float("nan")
    aic: Optional[float] = None
    error: Optional[str] = None
    note: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class EvalReport:
    folds: Tuple[FoldResult, ...]
    order: int
    seed: int
    models: Tuple[str, ...]
    variable_names: Tuple[str, ...] = ()
    config_hash: Optional[str] = None
    residuals: Dict[Tuple[int, int, str], np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def per_fold(self) -> List[Tuple[str, float]]:
        return [(r.model, r.distance) for r in self.folds]

    @property
    def failures(self) -> List[FoldResult]:
        return [r for r in self.folds if not r.ok]

    @property
    def replications(self) -> List[int]:
        return sorted({r.replication for r in self.folds})

    def mean_distance(self, model: str, replication: Optional[int] = None) -> float:
        values = [r.distance for r in self.folds
                  if r.model == model and r.ok and replication in (None, r.replication)]
        return float(np.mean(values)) if values else float("nan")

    def amc(self, reference: str = "hnb", challenger: str = "tlnpn",
            replication: Optional[int] = None) -> float:
        """AMC of fold-averaged distances over the folds where both models produced data."""
        by_key = {(r.replication, r.fold, r.model): r for r in self.folds if r.ok}
        shared = [(rep, fold) for rep, fold, model in by_key
                  if model == reference and (rep, fold, challenger) in by_key
                  and replication in (None, rep)]
        if not shared:
            return float("nan")
        omega_ref = np.mean([by_key[(rep, fold, reference)].distance for rep, fold in shared])
        omega_ch = np.mean([by_key[(rep, fold, challenger)].distance for rep, fold in shared])
        try:
            return GoodnessOfFitMetrics.amc(float(omega_ref), float(omega_ch))
        except UndefinedComparisonError:
            return float("nan")

    def amc_by_replication(self, reference: str = "hnb", challenger: str = "tlnpn") -> Dict[int, float]:
        return {rep: self.amc(reference, challenger, rep) for rep in self.replications}


def _as_matrix(data) -> Tuple[np.ndarray, Tuple[str, ...]]:
    if isinstance(data, Dataset):
        return data.values, data.variable_names
    values = np.asarray(data)
    if values.ndim != 2:
        raise ShapeError(f"expected an n x p matrix, got shape {values.shape}")
    return values, tuple(f"y{j + 1}" for j in range(values.shape[1]))


def _check_models(models: Sequence[str], covariates) -> None:
    if not models:
        raise InvalidParameterError("at least one model is required")
    for tag in models:
        if tag not in ENGINES:
            raise InvalidParameterError(f"unknown model {tag!r}; expected one of {sorted(ENGINES)}")
        if ENGINES[tag].needs_covariates and covariates is None:
            raise InvalidParameterError(f"model {tag!r} needs covariates")


def split_state(seed: int, replication: int) -> int:
    """Integer random state for the fold partition of one replication."""
    return int(np.random.SeedSequence([seed, replication]).generate_state(1)[0])


def _evaluate(tag: str, model_index: int, replication: int, fold: int, train: np.ndarray,
              test: np.ndarray, x_train, x_test, order: int, seed: int,
              options: FitOptions, bridge_tol: float):
    rng = np.random.default_rng([seed, replication, fold, model_index])
    try:
        engine = build_engine(tag, options, tol=bridge_tol).fit(train, x_train)
        simulated = engine.simulate(test.shape[0], x_test, rng)
        distance = GoodnessOfFitMetrics.wasserstein_pd(simulated, test, order)
        marginal = GoodnessOfFitMetrics.marginal_distances(simulated, test, order)
        corr = GoodnessOfFitMetrics.correlation_discrepancy(simulated, test)
    except RECOVERABLE_ERRORS as exc:
        logger.warning("replication %d fold %d: %s failed: %s", replication, fold, tag, exc)
        return FoldResult(replication, fold, tag, float("nan"), error=f"{type(exc).__name__}: {exc}"), None

    logger.debug("replication %d fold %d: %s W=%.4f", replication, fold, tag, distance)
    model_aic = getattr(engine, "aic", None)
    notes = []
    if model_aic is None:
        notes.append(f"aic not applicable: {tag} has no likelihood")
    if not np.isfinite(corr["max_abs"]):
        notes.append("correlation gap undefined: no variable pair has a finite Kendall tau "
                     "in both samples")
    result = FoldResult(replication, fold, tag, distance, tuple(float(v) for v in marginal),
                        corr["max_abs"], corr["mean_abs"], aic=model_aic, note="; ".join(notes) or None)
    return result, GoodnessOfFitMetrics.sorted_residuals(simulated, test)


def _run_partitions(values, covariates, partitions, models, order, seed, n_jobs, options, bridge_tol):
    tasks = []
    for replication, fold, train_idx, test_idx in partitions:
        x_train = None if covariates is None else covariates[train_idx]
        x_test = None if covariates is None else covariates[test_idx]
        for model_index, tag in enumerate(models):
            tasks.append(delayed(_evaluate)(tag, model_index, replication, fold, values[train_idx],
                                            values[test_idx], x_train, x_test, order, seed,
                                            options, bridge_tol))
    outcomes = Parallel(n_jobs=n_jobs)(tasks)
    folds = tuple(result for result, _ in outcomes)
    residuals = {(r.replication, r.fold, r.model): res for r, res in outcomes if res is not None}
    return folds, residuals


def kfold_cv(data, covariates=None, k: int = 5, models: Sequence[str] = ("hnb", "tlnpn"),
             sim_n: Optional[int] = None, seed: int = 0, order: int = 2, replication: int = 0,
             n_jobs: int = 1, options: Optional[FitOptions] = None,
             bridge_tol: float = PHI4_TOL) -> EvalReport:
    """Fit every model on k-1 folds and compare a same-size simulation with the held-out fold."""
    values, names = _as_matrix(data)
    models = tuple(models)
    _check_models(models, covariates)
    if covariates is not None:
        covariates = np.asarray(covariates, dtype=float)
        if covariates.shape != values.shape:
            raise ShapeError(f"covariates {covariates.shape} do not match data {values.shape}")
    if k < 2 or k > values.shape[0]:
        raise InvalidParameterError(f"cannot split {values.shape[0]} rows into {k} folds")

    splitter = KFold(n_splits=k, shuffle=True, random_state=split_state(seed, replication))
    partitions = [(replication, fold, train_idx, test_idx)
                  for fold, (train_idx, test_idx) in enumerate(splitter.split(values))]
    if sim_n is not None and any(test_idx.size != sim_n for *_, test_idx in partitions):
        raise ShapeError(f"simulation size {sim_n} must equal every test-fold size")

    folds, residuals = _run_partitions(values, covariates, partitions, models, order, seed, n_jobs,
                                       options or FitOptions(), bridge_tol)
    return EvalReport(folds=folds, order=order, seed=seed, models=models, variable_names=names,
                      residuals=residuals)


def random_split_eval(data, folds: int = 3, n_splits: int = 50,
                      models: Sequence[str] = ("hnb", "tlnpn"), seed: int = 0, order: int = 2,
                      n_jobs: int = 1, options: Optional[FitOptions] = None,
                      bridge_tol: float = PHI4_TOL) -> EvalReport:
    """Per split, shuffle the rows, hold out one fold and train on the rest."""
    values, names = _as_matrix(data)
    models = tuple(models)
    _check_models(models, None)
    if n_splits < 1:
        raise InvalidParameterError("at least one split is required")
    if folds < 2 or folds > values.shape[0]:
        raise InvalidParameterError(f"cannot split {values.shape[0]} rows into {folds} folds")

    partitions = []
    for split in range(n_splits):
        splitter = KFold(n_splits=folds, shuffle=True, random_state=split_state(seed, split))
        train_idx, test_idx = next(splitter.split(values))
        partitions.append((split, 0, train_idx, test_idx))

    results, residuals = _run_partitions(values, None, partitions, models, order, seed, n_jobs,
                                         options or FitOptions(), bridge_tol)
    return EvalReport(folds=results, order=order, seed=seed, models=models, variable_names=names,
                      residuals=residuals)
