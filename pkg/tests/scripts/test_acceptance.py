"""End-to-end reproduction runs at desk scale.

Run with ``pytest -m slow tests/scripts``; the Setting Two and real-data runs take
tens of minutes.
"""
import itertools
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.special import ndtri
from scipy.stats import spearmanr

from app.config import load_config
from app.models.params import CorrelationKind, CorrelationSpec, Flavor
from app.services.count_models import count_params, hnb_log_pmf, zinb_log_pmf
from app.services.experiment_runner import run_experiment
from app.services.latent_copula import fit_tlnpn
from app.services.mle_fit import RegressionCoefficients, hnb_loglik, zinb_loglik
from app.services.synth import gd_covariance, random_orthogonal
from app.utils.linalg import sample_mvn
from app.utils.metrics import wasserstein_pd

pytestmark = pytest.mark.slow

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def _run(name, tmp_path, **overrides):
    config = load_config(CONFIG_DIR / name, {"output": str(tmp_path), **overrides})
    summary = run_experiment(config)
    return summary.results_dir


def test_true_model_wins_on_aic(tmp_path):
    fits = pd.read_csv(_run("setting_one.toml", tmp_path) / "fits.csv")
    wide = fits.pivot_table(index=["flavor", "zero_target", "replication"], columns="model", values="aic")
    for (flavor, zero_target), group in wide.groupby(level=["flavor", "zero_target"]):
        true, other = flavor.lower(), ("hnb" if flavor == "ZINB" else "zinb")
        share = float(np.mean(group[true] < group[other]))
        assert share >= 0.9, (flavor, zero_target, share)


def test_zero_deflation_favours_hurdle(tmp_path):
    summary = pd.read_csv(_run("setting_one_deflation.toml", tmp_path) / "summary.csv")
    below = summary[summary["pi_h"] < 0.5].sort_values("pi_h")
    assert (below["median_aic_gap"] > 0).all()
    rho, _ = spearmanr(below["pi_h"], below["median_aic_gap"])
    assert rho < -0.8


def test_setting_two_amc_sign_pattern(tmp_path):
    summary = pd.read_csv(_run("setting_two.toml", tmp_path) / "summary.csv")
    no_signal = summary[summary["beta1"] == 0]
    assert (no_signal["median_amc"].abs() < 0.05).all()

    strong = summary[(summary["beta1"] == 2) & np.isclose(summary["rho"], 0.9)]
    without_covariates = strong[strong["reference"] == "hnb"]["median_amc"].item()
    with_covariates = strong[strong["reference"] == "hnb_cov"]["median_amc"].item()
    assert without_covariates < 0
    assert with_covariates > 0


def test_copula_recovers_latent_correlation():
    lags = np.abs(np.subtract.outer(np.arange(5), np.arange(5)))
    sigma = 0.7 ** lags
    thresholds = ndtri(np.array([0.1, 0.3, 0.5, 0.2, 0.4]))
    errors = []
    for replication in range(10):
        latent = sample_mvn(1200, sigma, replication)
        data = np.where(latent < thresholds, 0.0, np.rint(100 * np.exp(latent)) + 1)
        errors.append(np.max(np.abs(fit_tlnpn(data, n_jobs=2).sigma_hat - sigma)))
    assert np.median(errors) < 0.15


def test_real_data_protocol_on_standin(tmp_path):
    directory = _run("real_data_qmp.toml", tmp_path)
    amc = pd.read_csv(directory / "amc.csv")
    assert len(amc) == 10
    assert np.isfinite(amc["amc"]).all()


def _bruteforce(X, Y, order):
    return min(np.mean(np.linalg.norm(X - Y[list(perm)], axis=1) ** order)
               for perm in itertools.permutations(range(len(X)))) ** (1 / order)


def test_wasserstein_matches_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n, p = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        X = rng.integers(0, 10, (n, p)).astype(float)
        Y = rng.integers(0, 10, (n, p)).astype(float)
        for order in (1, 2):
            assert abs(wasserstein_pd(X, Y, order) - _bruteforce(X, Y, order)) < 1e-12


@pytest.mark.parametrize("rho,p", itertools.product([0.05, 0.3, 0.7, 0.9], [2, 5, 20]))
def test_gd_structure(rho, p):
    sigma = gd_covariance(CorrelationSpec(kind=CorrelationKind.GD, rho=rho, p=p))
    assert abs(np.trace(sigma) - 5) < 1e-10
    q = random_orthogonal(p, 0)
    assert np.max(np.abs(q.T @ q - np.eye(p))) < 1e-12


def test_likelihood_equivalence_fuzz():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(3, 20))
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        coef = RegressionCoefficients(rng.normal(0.5, 0.7, 2), rng.normal(0, 1, 2),
                                      float(rng.normal(0, 0.8)))
        y = rng.integers(0, 12, n)
        y[0], y[-1] = 0, max(y[-1], 1)
        mu, pi = np.exp(X @ coef.beta), 1 / (1 + np.exp(-(X @ coef.gamma)))
        zinb = sum(zinb_log_pmf(int(y[i]), count_params(mu[i], coef.r, pi[i], Flavor.ZINB)) for i in range(n))
        hnb = sum(hnb_log_pmf(int(y[i]), count_params(mu[i], coef.r, pi[i], Flavor.HNB)) for i in range(n))
        assert abs(zinb_loglik(y, X, X, coef).total - zinb) < 1e-8
        assert abs(hnb_loglik(y, X, coef) - hnb) < 1e-8
