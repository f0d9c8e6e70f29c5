"""Truncated latent Gaussian copula (TLNPN): rank-based fitting and sampling.

The latent correlation of each pair of zero-inflated variables is recovered by
inverting the truncated/truncated bridge function, which maps a latent
Gaussian correlation to the population Kendall's tau of the observed,
zero-truncated variables. The two 4-dimensional orthant probabilities in the
bridge have enough structure to reduce to 2-dimensional integrals, which are
evaluated with composite Gauss-Legendre rules refined until two successive
rules agree.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri
from scipy.stats import multivariate_normal

from app.utils.errors import (ConstantColumnError, DegenerateDataError, FactorizationError,
                              IntegrationError, InvalidCorrelationError, InvalidParameterError,
                              ShapeError)
from app.utils.linalg import cholesky_factor, sample_mvn

logger = logging.getLogger(__name__)

PHI4_TOL = 1e-6
PHI4_MAX_POINTS = 200_000

BRIDGE_BOUND = 0.9999
BRIDGE_XTOL = 1e-7

# phi(8.5) < 1e-16; the quadrature domain stops there
_EDGE = 8.5
_BASE_BREAKS = (-3.0, 0.0, 3.0)
_GL_LEVELS = (12, 16, 24, 32, 48, 64)


@dataclass(frozen=True)
class KendallMatrix:
    tau: np.ndarray


@dataclass(frozen=True)
class LatentCopulaModel:
    sigma_hat: np.ndarray
    delta_hat: np.ndarray
    marginals: Tuple[np.ndarray, ...]
    clamped_pairs: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        sigma = self.sigma_hat
        if not np.allclose(sigma, sigma.T) or not np.allclose(np.diag(sigma), 1.0):
            raise InvalidCorrelationError("latent correlation must be symmetric with unit diagonal")
        if len(self.marginals) != sigma.shape[0] or any(m.size == 0 for m in self.marginals):
            raise ShapeError("one nonempty stored marginal is required per variable")

    @property
    def p(self) -> int:
        return self.sigma_hat.shape[0]

    @property
    def zero_fractions(self) -> np.ndarray:
        return np.array([np.mean(m == 0) for m in self.marginals])


class BridgeRoot(NamedTuple):
    sigma: float
    clamped: bool


def kendall_tau_matrix(data) -> KendallMatrix:
    """Pairwise sample Kendall's tau; tied pairs contribute 0 (tau-a)."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ShapeError(f"expected an n x p matrix, got shape {data.shape}")
    n, p = data.shape
    if n < 2:
        raise DegenerateDataError("Kendall's tau needs at least two observations")
    for j in range(p):
        if np.all(data[:, j] == data[0, j]):
            raise ConstantColumnError(j)

    upper_i, upper_k = np.triu_indices(n, 1)
    signs = np.sign(data[upper_i] - data[upper_k])   # (n(n-1)/2, p)
    tau = (signs.T @ signs) * (2.0 / (n * (n - 1)))
    np.fill_diagonal(tau, 1.0)
    return KendallMatrix(tau=np.clip(tau, -1.0, 1.0))


def zero_truncation_levels(data) -> np.ndarray:
    """Latent truncation levels Phi^-1(zero fraction), with the fraction clamped by 1/(4n)."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    n = data.shape[0]
    if n < 2:
        raise DegenerateDataError("truncation levels need at least two observations")
    share = np.mean(data == 0, axis=0)
    share = np.clip(share, 1 / (4 * n), 1 - 1 / (4 * n))
    return ndtri(share)


def mvn_cdf(upper, corr, tol: float = PHI4_TOL) -> float:
    """P(X <= upper) for X ~ N(0, corr) by scipy's randomized lattice rule (Genz)."""
    upper = np.asarray(upper, dtype=float)
    corr = np.asarray(corr, dtype=float)
    if corr.shape != (upper.size, upper.size):
        raise ShapeError(f"correlation of shape {corr.shape} does not match {upper.size} limits")
    try:
        cholesky_factor(corr)
    except FactorizationError as exc:
        raise InvalidCorrelationError(str(exc)) from exc

    if np.any(upper == -np.inf):
        return 0.0
    finite = upper < np.inf
    if not finite.any():
        return 1.0
    upper, corr = upper[finite], corr[np.ix_(finite, finite)]
    if upper.size == 1:
        return float(ndtr(upper[0]))
    value = multivariate_normal.cdf(upper, mean=np.zeros(upper.size), cov=corr,
                                    maxpts=PHI4_MAX_POINTS * upper.size, abseps=tol, releps=0.0)
    return float(np.clip(value, 0.0, 1.0))


def phi4(a, sigma4, tol: float = PHI4_TOL) -> float:
    """4-dimensional standard Gaussian CDF with correlation ``sigma4`` at ``a``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (4,):
        raise ShapeError(f"phi4 takes 4 limits, got shape {a.shape}")
    return mvn_cdf(a, sigma4, tol)


def bridge_correlations(sigma_jk: float) -> Tuple[np.ndarray, np.ndarray]:
    """Symmetric 4x4 correlations whose orthants make up the bridge at ``sigma_jk``."""
    r = sigma_jk
    h = 1 / np.sqrt(2)
    sigma4a = np.array([[1, 0, h, -r * h],
                        [0, 1, -r * h, h],
                        [h, -r * h, 1, -r],
                        [-r * h, h, -r, 1]])
    sigma4b = np.array([[1, r, h, r * h],
                        [r, 1, r * h, h],
                        [h, r * h, 1, r],
                        [r * h, h, r, 1]])
    return sigma4a, sigma4b


@lru_cache(maxsize=None)
def _legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def _breaks(fixed, kinks) -> np.ndarray:
    """Panel edges: fixed points and kink centres, banded by +/-8 widths when the kink is sharp."""
    cols = [np.asarray(b, dtype=float) for b in fixed]
    for centre, width in kinks:
        cols.append(np.asarray(centre, dtype=float))
        if width < 1:
            cols.extend([np.asarray(centre - 8 * width), np.asarray(centre + 8 * width)])
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _panel_rule(lo, hi, breaks: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite n-point Gauss-Legendre rule on [lo, hi] split at ``breaks``, one interval per row."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), breaks.shape[:-1])
    hi = np.maximum(np.broadcast_to(np.asarray(hi, dtype=float), lo.shape), lo)
    inner = np.clip(np.sort(breaks, axis=-1), lo[..., None], hi[..., None])
    edges = np.concatenate([lo[..., None], inner, hi[..., None]], axis=-1)
    half = np.diff(edges, axis=-1) / 2
    mid = edges[..., :-1] + half
    t, w = _legendre(n)
    shape = (*mid.shape[:-1], -1)
    return (mid[..., None] + half[..., None] * t).reshape(shape), (half[..., None] * w).reshape(shape)


def _npdf(x):
    return np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)


def _bridge_orthants(r: float, a1: float, a2: float, n: int) -> Tuple[float, float]:
    """Phi4(a1, a2, 0, 0) under the two bridge correlations.

    With latent pairs (U1, V1), (U2, V2) of correlation r, the 4a orthant is
    {U1 <= a1, V2 <= a2, U2 >= U1, V1 >= V2} and the 4b orthant is
    {U1 <= a1, V1 <= a2, U2 >= U1, V2 >= V1}. U1 and V2 are independent, and
    given both the remaining events are independent univariate normals, so each
    orthant is a 2-d integral of ndtr products against phi(u) phi(v). The
    products switch sharply along u = r v and v = r u when |r| is near 1; panel
    edges follow those lines.
    """
    s = np.sqrt((1 - r) * (1 + r))
    a1, a2 = (float(np.clip(x, -_EDGE, _EDGE)) for x in (a1, a2))
    u_kinks = [(0.0, s), (r * a2, s)]
    if r != 0:
        u_kinks.append((a2 / r, s / abs(r)))
    u, wu = _panel_rule(-_EDGE, a1, _breaks(_BASE_BREAKS, u_kinks), n)
    weight = wu * _npdf(u)

    u = u[:, None]
    v_kinks = [(r * u[:, 0], s)]
    if r != 0:
        v_kinks.append((u[:, 0] / r, s / abs(r)))

    v, wv = _panel_rule(-_EDGE, a2, _breaks(_BASE_BREAKS, v_kinks), n)
    inner_a = np.sum(wv * _npdf(v) * ndtr((r * v - u) / s) * ndtr((r * u - v) / s), axis=1)

    v, wv = _panel_rule(-_EDGE, _EDGE, _breaks((*_BASE_BREAKS, a2), v_kinks), n)
    inner_b = np.sum(wv * _npdf(v) * ndtr((np.minimum(a2, v) - r * u) / s) * ndtr((r * v - u) / s),
                     axis=1)
    return float(weight @ inner_a), float(weight @ inner_b)


def bridge_tt(sigma_jk: float, delta_j: float, delta_k: float, tol: float = PHI4_TOL) -> float:
    """Kendall's tau of two truncated variables whose latent correlation is ``sigma_jk``.

    The Gauss-Legendre order is raised until successive rules change both orthants
    by at most ``tol / 10`` in total.
    """
    if not abs(sigma_jk) < 1:
        raise InvalidParameterError(f"latent correlation must lie in (-1, 1), got {sigma_jk}")
    if not (np.isfinite(delta_j) and np.isfinite(delta_k)):
        raise InvalidParameterError("truncation levels must be finite")
    if sigma_jk == 0:
        # both correlations coincide
        return 0.0

    previous = None
    for n in _GL_LEVELS:
        current = _bridge_orthants(sigma_jk, -delta_j, -delta_k, n)
        if previous is not None:
            error = 2 * (abs(current[0] - previous[0]) + abs(current[1] - previous[1]))
            if error <= tol / 10:
                return 2 * (current[1] - current[0])
        previous = current
    raise IntegrationError(
        f"bridge at sigma={sigma_jk:.6f}, delta=({delta_j:.4f}, {delta_k:.4f}) did not reach "
        f"tolerance {tol:g} (last change {error:.2e})")


def invert_bridge(tau_hat: float, delta_j: float, delta_k: float, tol: float = PHI4_TOL) -> BridgeRoot:
    """Latent correlation whose bridge value equals ``tau_hat``; clamped at +/-0.9999."""
    if not (np.isfinite(delta_j) and np.isfinite(delta_k)):
        raise InvalidParameterError("truncation levels must be finite")
    if tau_hat == 0:
        return BridgeRoot(0.0, False)
    # G(0) = 0 and G is increasing, so only the endpoint on tau's side can clamp
    bound = BRIDGE_BOUND if tau_hat > 0 else -BRIDGE_BOUND
    edge = bridge_tt(bound, delta_j, delta_k, tol)
    if abs(tau_hat) >= abs(edge):
        logger.debug("tau %.4f outside bridge range (edge %.4f), clamped", tau_hat, edge)
        return BridgeRoot(bound, True)
    lo, hi = sorted((0.0, bound))
    root = brentq(lambda s: bridge_tt(s, delta_j, delta_k, tol) - tau_hat, lo, hi, xtol=BRIDGE_XTOL)
    return BridgeRoot(float(root), False)


def nearest_correlation(m, floor: float = 1e-8) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and rescale to a unit diagonal."""
    m = np.asarray(m, dtype=float)
    sym = (m + m.T) / 2
    values, vectors = np.linalg.eigh(sym)
    rebuilt = (vectors * np.maximum(values, floor)) @ vectors.T
    scale = np.sqrt(np.diag(rebuilt))
    corr = rebuilt / np.outer(scale, scale)
    corr = (corr + corr.T) / 2
    np.fill_diagonal(corr, 1.0)
    return corr


def fit_tlnpn(data, n_jobs: int = 1, tol: float = PHI4_TOL) -> LatentCopulaModel:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ShapeError(f"expected an n x p matrix, got shape {data.shape}")
    n, p = data.shape
    if n < 10 or p < 2:
        raise DegenerateDataError(f"TLNPN fitting needs n >= 10 and p >= 2, got {n} x {p}")

    tau = kendall_tau_matrix(data).tau
    delta = zero_truncation_levels(data)
    pairs = [(j, k) for j in range(p) for k in range(j + 1, p)]
    roots = Parallel(n_jobs=n_jobs)(
        delayed(invert_bridge)(tau[j, k], delta[j], delta[k], tol) for j, k in pairs)

    sigma = np.eye(p)
    clamped = []
    for (j, k), root in zip(pairs, roots):
        sigma[j, k] = sigma[k, j] = root.sigma
        if root.clamped:
            clamped.append((j, k))
    if clamped:
        logger.warning("%d of %d latent correlations clamped at the bridge boundary",
                       len(clamped), len(pairs))

    return LatentCopulaModel(sigma_hat=nearest_correlation(sigma), delta_hat=delta,
                             marginals=tuple(np.sort(col) for col in data.T),
                             clamped_pairs=tuple(clamped))


def empirical_quantile(sorted_values: np.ndarray, u) -> np.ndarray:
    """Smallest order statistic whose empirical CDF reaches ``u``."""
    n = sorted_values.size
    rank = np.clip(np.ceil(np.asarray(u) * n).astype(np.int64), 1, n)
    return sorted_values[rank - 1]


def sample_from_marginals(latent: np.ndarray, marginals: Sequence[np.ndarray]) -> np.ndarray:
    u = ndtr(latent)
    return np.column_stack([empirical_quantile(m, u[:, j]) for j, m in enumerate(marginals)])


def sample_tlnpn(model: LatentCopulaModel, n: int, seed: Optional[int] = None) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    latent = sample_mvn(n, model.sigma_hat, rng)
    return sample_from_marginals(latent, model.marginals)
