"""Configuration-driven experiments: grid x replications, persisted tables and a manifest.

Cells (grid point, replication) are independent and run on a joblib pool. Their
rows are gathered by the calling process and written once, so repeated runs of
the same configuration produce identical tables.
"""
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy
import sklearn
from joblib import Parallel, delayed
from scipy.special import logit

from app import __version__
from app.config import ExperimentConfig, ExperimentKind, config_hash
from app.models.params import SETTING_DEFAULTS, FitOptions, Flavor, Setting, SettingConfig
from app.services.evaluation import RECOVERABLE_ERRORS, EvalReport, kfold_cv, random_split_eval
from app.services.mle_fit import fit_regression
from app.services.synth import (calibrate_gamma0, gen_setting_one, gen_setting_three,
                                gen_setting_two, gen_standin_dataset)
from app.utils.data_loader import Dataset, load_counts_csv, rescale_power
from app.utils.errors import InfeasibleTargetError
from app.utils.reporting import RunResults, emit_report, read_manifest, write_manifest

logger = logging.getLogger(__name__)

COMPARISONS = (("hnb", "tlnpn"), ("hnb_cov", "tlnpn"), ("zinb", "tlnpn"))
RESIDUAL_REPLICATION = 0


@dataclass
class CellOutput:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    marginal: List[Dict[str, Any]] = field(default_factory=list)
    amc: List[Dict[str, Any]] = field(default_factory=list)
    residuals: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)
    skipped: List[Dict[str, Any]] = field(default_factory=list)


@dataclass(frozen=True)
class RunSummary:
    results_dir: Path
    config_hash: str
    failed_cells: Tuple[Dict[str, Any], ...] = ()
    skipped_cells: Tuple[Dict[str, Any], ...] = ()
    reused: bool = False

    @property
    def ok(self) -> bool:
        return not self.failed_cells


def cell_seed(master_seed: int, grid_index: int) -> int:
    return int(np.random.SeedSequence([master_seed, grid_index]).generate_state(1)[0])


def results_directory(config: ExperimentConfig) -> Path:
    return Path(config.output) / f"{config.experiment.value}-{config_hash(config)[:12]}"


def load_source(config: ExperimentConfig) -> Dataset:
    """The count table behind SettingThree and RealData, rescaled if configured."""
    if config.dataset is not None:
        data = load_counts_csv(config.dataset)
    else:
        data = gen_standin_dataset(config.standin, config.master_seed)
    if config.rescale_exponent is not None:
        logger.info("rescaling %s by power %g and rounding", data.provenance[0], config.rescale_exponent)
        data = rescale_power(data, config.rescale_exponent)
    return data


def _keys(config: ExperimentConfig, point: Dict[str, Any], grid_index: int, replication: int) -> Dict[str, Any]:
    keys = {"experiment": config.experiment.value, "grid_index": grid_index,
            "master_seed": config.master_seed, "replication": replication}
    keys.update({name: getattr(value, "value", value) for name, value in point.items()})
    return keys


def _correlation(config: ExperimentConfig, setting: Setting, point: Dict[str, Any], p: int) -> Dict[str, Any]:
    corr = dict(SETTING_DEFAULTS[setting]["corr"])
    corr.update(kind=point.get("corr_kind", config.corr_kind), p=p, orthogonal_seed=config.master_seed)
    if "rho" in point:
        corr["rho"] = point["rho"]
    return corr


def _setting_one_cell(config, point, grid_index, replication, out: CellOutput) -> None:
    keys = _keys(config, point, grid_index, replication)
    rng = np.random.default_rng([config.master_seed, grid_index, replication])
    if config.experiment is ExperimentKind.SETTING_ONE_DEFLATION:
        setting = SettingConfig(setting=Setting.ONE_DEFLATION, n=config.n,
                                gamma0=float(logit(point["pi_h"])), gamma1=0.0)
    else:
        setting = SettingConfig(setting=Setting.ONE, n=config.n, flavor=point.get("flavor"),
                                beta1=point.get("beta1"), gamma1=point.get("gamma1"),
                                zero_target=point.get("zero_target"))
        try:
            gamma0 = calibrate_gamma0(setting, setting.zero_target, rng)
        except InfeasibleTargetError as exc:
            logger.info("grid point %d skipped: %s", grid_index, exc)
            out.skipped.append({**keys, "reason": str(exc)})
            return
        setting = setting.model_copy(update={"gamma0": gamma0})

    y, x = gen_setting_one(setting, rng)
    design = np.column_stack([np.ones(x.size), x])
    for flavor in (Flavor.ZINB, Flavor.HNB):
        row = {**keys, "fold": 0, "model": flavor.value.lower(), "gamma0": setting.gamma0,
               "zero_fraction": float(np.mean(y == 0))}
        try:
            fit = fit_regression(y, design, design, flavor, FitOptions(seed=replication))
        except RECOVERABLE_ERRORS as exc:
            logger.warning("grid point %d replication %d: %s fit failed: %s",
                           grid_index, replication, flavor.value, exc)
            out.rows.append({**row, "aic": np.nan, "loglik": np.nan, "error": str(exc)})
            out.failures.append({**row, "error": str(exc)})
            continue
        out.rows.append({**row, "aic": fit.aic, "loglik": fit.loglik, "converged": fit.converged,
                         "at_zero_boundary": fit.at_zero_boundary, "error": None})


def _collect_report(report: EvalReport, keys: Dict[str, Any], out: CellOutput, with_residuals: bool) -> None:
    for result in report.folds:
        base = {**keys, "replication": result.replication, "fold": result.fold, "model": result.model}
        marginal_mean = float(np.mean(result.marginal)) if result.marginal else np.nan
        out.rows.append({**base, "order": report.order, "distance": result.distance,
                         "marginal_mean": marginal_mean, "corr_max_abs": result.corr_max_abs,
                         "corr_mean_abs": result.corr_mean_abs, "aic": result.aic,
                         "error": result.error, "note": result.note})
        if not result.ok:
            out.failures.append({**base, "error": result.error})
            continue
        for name, value in zip(report.variable_names, result.marginal):
            out.marginal.append({**base, "variable": name, "distance": value})

    for reference, challenger in COMPARISONS:
        if reference not in report.models or challenger not in report.models:
            continue
        for replication, value in report.amc_by_replication(reference, challenger).items():
            out.amc.append({**keys, "replication": replication, "reference": reference,
                            "challenger": challenger, "amc": value,
                            "error": None if np.isfinite(value) else "no fold with both models"})

    if not with_residuals:
        return
    for (replication, fold, model), residuals in sorted(report.residuals.items()):
        if replication != RESIDUAL_REPLICATION:
            continue
        for j, name in enumerate(report.variable_names):
            for rank, value in enumerate(residuals[:, j]):
                out.residuals.append({**keys, "replication": replication, "fold": fold, "model": model,
                                      "variable": name, "rank": rank, "residual": value})


def _cv_cell(config, point, grid_index, replication, out: CellOutput, source: Optional[Dataset]) -> None:
    keys = _keys(config, point, grid_index, replication)
    rng = np.random.default_rng([config.master_seed, grid_index, replication])
    if config.experiment is ExperimentKind.SETTING_TWO:
        p = config.p or SETTING_DEFAULTS[Setting.TWO]["p"]
        setting = SettingConfig(setting=Setting.TWO, n=config.n, p=p, beta1=point.get("beta1"),
                                gamma0=point.get("gamma0"), gamma1=point.get("gamma1"),
                                corr=_correlation(config, Setting.TWO, point, p))
        data, covariates = gen_setting_two(setting, rng)
    else:
        p = config.p or SETTING_DEFAULTS[Setting.THREE]["p"]
        setting = SettingConfig(setting=Setting.THREE, n=config.n, p=p,
                                zero_target=point.get("zero_target"), transform=point.get("transform"),
                                corr=_correlation(config, Setting.THREE, point, p))
        data, covariates = gen_setting_three(setting, rng, source), None

    report = kfold_cv(data, covariates if "hnb_cov" in config.models else None, k=config.folds,
                      models=config.models, sim_n=config.sim_n, seed=cell_seed(config.master_seed, grid_index),
                      order=config.order, replication=replication, bridge_tol=config.bridge_tol)
    _collect_report(report, keys, out, replication == RESIDUAL_REPLICATION)


def run_cell(config: ExperimentConfig, point: Dict[str, Any], grid_index: int, replication: int,
             source: Optional[Dataset] = None) -> CellOutput:
    out = CellOutput()
    try:
        if config.experiment in (ExperimentKind.SETTING_ONE, ExperimentKind.SETTING_ONE_DEFLATION):
            _setting_one_cell(config, point, grid_index, replication, out)
        else:
            _cv_cell(config, point, grid_index, replication, out, source)
    except RECOVERABLE_ERRORS as exc:
        logger.warning("cell (grid %d, replication %d) failed: %s", grid_index, replication, exc)
        out.failures.append({**_keys(config, point, grid_index, replication), "fold": None,
                             "model": None, "error": f"{type(exc).__name__}: {exc}"})
    return out


def _real_data_cells(config: ExperimentConfig, source: Dataset) -> List[CellOutput]:
    out = CellOutput()
    keys = _keys(config, {}, 0, 0)
    report = random_split_eval(source, folds=config.folds, n_splits=config.n_splits, models=config.models,
                               seed=config.master_seed, order=config.order, n_jobs=config.n_jobs,
                               bridge_tol=config.bridge_tol)
    _collect_report(report, keys, out, with_residuals=True)
    return [out]


def _table(records: List[Dict[str, Any]], order: List[str]) -> pd.DataFrame:
    frame = pd.DataFrame.from_records(records)
    if frame.empty:
        return frame
    by = [column for column in order if column in frame.columns]
    return frame.sort_values(by, kind="stable").reset_index(drop=True)


def summarize(config: ExperimentConfig, tables: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Per grid point: median AMC per comparison, or the AIC comparison for Setting One."""
    if config.experiment in (ExperimentKind.SETTING_ONE, ExperimentKind.SETTING_ONE_DEFLATION):
        fits = tables.get("fits", pd.DataFrame())
        if fits.empty:
            return pd.DataFrame()
        wide = fits.pivot_table(index=["grid_index", "replication"], columns="model", values="aic")
        if not {"zinb", "hnb"} <= set(wide.columns):
            return pd.DataFrame()
        gap = (wide["zinb"] - wide["hnb"]).rename("aic_gap").reset_index()
        summary = gap.groupby("grid_index")["aic_gap"].agg(
            median_aic_gap="median",
            share_hnb_better=lambda g: float(np.mean(g > 0)),
            share_zinb_better=lambda g: float(np.mean(g < 0)),
            replications="count").reset_index()
        points = fits.drop_duplicates("grid_index")[
            [c for c in fits.columns if c in config.grid.keys() or c == "grid_index"]]
        return points.merge(summary, on="grid_index").sort_values("grid_index").reset_index(drop=True)

    amc = tables.get("amc", pd.DataFrame())
    if amc.empty:
        return pd.DataFrame()
    amc = amc[np.isfinite(amc["amc"])]
    group = ["grid_index", *[c for c in config.grid.keys() if c in amc.columns], "reference", "challenger"]
    summary = amc.groupby(group, dropna=False)["amc"].agg(
        median_amc="median", share_challenger_better=lambda g: float(np.mean(g < 0)),
        replications="count").reset_index()
    return summary.sort_values(group, kind="stable").reset_index(drop=True)


def _manifest(config: ExperimentConfig, digest: str, cells: int, failures, skipped, tables) -> Dict[str, Any]:
    return {
        "experiment": config.experiment.value,
        "config_hash": digest,
        "config": config.model_dump(mode="json"),
        "master_seed": config.master_seed,
        "software": {"zicount": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "scikit-learn": sklearn.__version__, "pandas": pd.__version__},
        "cells": cells,
        "failed_cells": failures,
        "skipped_cells": skipped,
        "status": "partial" if failures else "complete",
        "rescale_exponent": config.rescale_exponent,
        "tables": sorted(tables),
        "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _clean(records: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    return [{k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in r.items()}
            for r in records]


def run_experiment(config: ExperimentConfig, force: bool = False) -> RunSummary:
    digest = config_hash(config)
    directory = results_directory(config)
    previous = read_manifest(directory)
    if previous.get("config_hash") == digest and not force:
        logger.info("results for %s already in %s; skipping (use force to rerun)", digest[:12], directory)
        return RunSummary(directory, digest, tuple(previous.get("failed_cells", ())),
                          tuple(previous.get("skipped_cells", ())), reused=True)

    source = None
    if config.experiment in (ExperimentKind.SETTING_THREE, ExperimentKind.REAL_DATA):
        source = load_source(config)

    logger.info("running %s (%s) into %s", config.experiment.value, digest[:12], directory)
    if config.experiment is ExperimentKind.REAL_DATA:
        outputs = _real_data_cells(config, source)
    else:
        cells = [(point, g, rep) for g, point in enumerate(config.grid_points())
                 for rep in range(config.replications)]
        logger.info("%d grid points x %d replications = %d cells", len(config.grid_points()),
                    config.replications, len(cells))
        outputs = Parallel(n_jobs=config.n_jobs)(
            delayed(run_cell)(config, point, g, rep, source) for point, g, rep in cells)

    merged = CellOutput()
    for output in outputs:
        for name in ("rows", "marginal", "amc", "residuals", "failures", "skipped"):
            getattr(merged, name).extend(getattr(output, name))

    key_order = ["grid_index", "replication", "fold", "model", "reference", "variable", "rank"]
    main_name = "fits" if config.experiment in (
        ExperimentKind.SETTING_ONE, ExperimentKind.SETTING_ONE_DEFLATION) else "distances"
    tables = {main_name: _table(merged.rows, key_order)}
    for name in ("marginal", "amc", "residuals"):
        records = getattr(merged, name)
        if records:
            tables[name] = _table(records, key_order)
    summary = summarize(config, tables)
    if not summary.empty:
        tables["summary"] = summary

    failures, skipped = _clean(merged.failures), _clean(merged.skipped)
    results = RunResults(tables=tables, manifest=_manifest(config, digest, len(outputs),
                                                           failures, skipped, tables))
    emit_report(results, directory, "csv")
    write_manifest(directory, results.manifest)
    if failures:
        logger.warning("%d failed cell(s); see %s", len(failures), directory / "manifest.json")
    logger.info("finished %s: tables %s", config.experiment.value, ", ".join(sorted(tables)))
    return RunSummary(directory, digest, tuple(failures), tuple(skipped))
