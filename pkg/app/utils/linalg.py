import numpy as np

from app.utils.errors import FactorizationError


def cholesky_factor(sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular factor of a symmetric positive definite matrix."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise FactorizationError(f"expected a square matrix, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, atol=1e-12):
        raise FactorizationError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("matrix is not positive definite") from exc


def sample_mvn(n: int, sigma: np.ndarray, seed=None) -> np.ndarray:
    """n rows drawn i.i.d. from N(0, sigma) through the Cholesky factor."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    factor = cholesky_factor(sigma)
    return rng.standard_normal((n, factor.shape[0])) @ factor.T


def cov_to_corr(sigma: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.diag(sigma))
    corr = sigma / np.outer(scale, scale)
    np.fill_diagonal(corr, 1.0)
    return corr
