"""
Squared-exponential GP expert math: covariance construction, marginal
likelihood and its gradient, conditional prediction, and maintenance of the
explicit inverse covariance under single-point additions and removals.
"""

from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import linalg

from ..config.settings import CACHE_REFRESH_EVERY, COVARIANCE_JITTER, PIVOT_THRESHOLD
from ..utils.logging_utils import get_logger
from .errors import InvalidParameterError, NumericFailureError
from .models import ExpertHyper, ExpertPosteriorCache, ExpertState

logger = get_logger(__name__)

LOG_2PI = np.log(2.0 * np.pi)

Rebuild = Callable[[List[int]], ExpertPosteriorCache]


def _check_length_scales(length_scales) -> np.ndarray:
    length_scales = np.atleast_1d(np.asarray(length_scales, dtype=float))
    if np.any(length_scales <= 0):
        raise InvalidParameterError(f"Length scales must be positive: {length_scales}")
    return length_scales


def se_correlation(x_m, x_n, length_scales) -> float:
    length_scales = _check_length_scales(length_scales)
    x_m = np.atleast_1d(np.asarray(x_m, dtype=float))
    x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
    if x_m.shape != x_n.shape or x_m.shape != length_scales.shape:
        raise InvalidParameterError("Input and length-scale dimensions disagree")
    return float(np.exp(-np.sum(((x_m - x_n) / length_scales) ** 2)))


def correlation_matrix(X1: np.ndarray, X2: np.ndarray, length_scales) -> np.ndarray:
    length_scales = _check_length_scales(length_scales)
    scaled_1 = np.atleast_2d(X1) / length_scales
    scaled_2 = np.atleast_2d(X2) / length_scales
    sq_dist = np.sum((scaled_1[:, None, :] - scaled_2[None, :, :]) ** 2, axis=-1)
    return np.exp(-sq_dist)


def covariance_entry(x_m, x_n, hyper: ExpertHyper, same_index: bool) -> float:
    value = hyper.output_scale * se_correlation(x_m, x_n, hyper.length_scales)
    if same_index:
        value += hyper.noise_var
    return value


def covariance_matrix(X: np.ndarray, hyper: ExpertHyper, jitter: float = COVARIANCE_JITTER) -> np.ndarray:
    X = np.atleast_2d(X)
    K = hyper.output_scale * correlation_matrix(X, X, hyper.length_scales)
    K[np.diag_indices_from(K)] += hyper.noise_var + jitter
    return K


def cholesky_factor(K: np.ndarray):
    try:
        return linalg.cho_factor(K, lower=True, check_finite=False)
    except linalg.LinAlgError as e:
        raise NumericFailureError(f"Covariance is not positive definite after jitter: {e}")


def lml_and_gradient(X: np.ndarray, y: np.ndarray, hyper: ExpertHyper) -> Tuple[float, np.ndarray]:
    """
    Log marginal likelihood and its gradient with respect to
    (sigma^2, l_1..l_D, tau^2), in the original parameterization.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        raise InvalidParameterError("Marginal likelihood needs at least one point")

    K = covariance_matrix(X, hyper)
    factor = cholesky_factor(K)
    alpha = linalg.cho_solve(factor, y, check_finite=False)
    K_inv = linalg.cho_solve(factor, np.eye(n), check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    lml = -0.5 * y @ alpha - 0.5 * log_det - 0.5 * n * LOG_2PI

    # 0.5 tr((K^-1 y y^T K^-1 - K^-1) dK)
    W = np.outer(alpha, alpha) - K_inv
    C = correlation_matrix(X, X, hyper.length_scales)
    sq_diff = (X[:, None, :] - X[None, :, :]) ** 2
    d_sigma2 = 0.5 * np.sum(W * C)
    d_lengths = (
        hyper.output_scale
        * np.einsum("ij,ij,ijd->d", W, C, sq_diff)
        / hyper.length_scales ** 3
    )
    d_noise = 0.5 * np.trace(W)
    return float(lml), np.concatenate([[d_sigma2], d_lengths, [d_noise]])


def log_marginal_likelihood(X: np.ndarray, y: np.ndarray, hyper: ExpertHyper) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise InvalidParameterError("Marginal likelihood needs at least one point")
    factor = cholesky_factor(covariance_matrix(X, hyper))
    alpha = linalg.cho_solve(factor, y, check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return float(-0.5 * y @ alpha - 0.5 * log_det - 0.5 * y.size * LOG_2PI)


def lml_gradient(X: np.ndarray, y: np.ndarray, hyper: ExpertHyper) -> np.ndarray:
    return lml_and_gradient(X, y, hyper)[1]


def conditional_predictive(x_star, X: np.ndarray, y: np.ndarray, hyper: ExpertHyper) -> Tuple[float, float]:
    """Predictive (mean, variance) of a noisy observation at x_star."""
    prior_var = hyper.output_scale + hyper.noise_var
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return 0.0, prior_var

    X = np.atleast_2d(np.asarray(X, dtype=float))
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    factor = cholesky_factor(covariance_matrix(X, hyper))
    k_star = hyper.output_scale * correlation_matrix(x_star, X, hyper.length_scales)[0]
    mean = k_star @ linalg.cho_solve(factor, y, check_finite=False)
    variance = prior_var - k_star @ linalg.cho_solve(factor, k_star, check_finite=False)
    return float(mean), float(max(variance, hyper.noise_var))


def build_cache(X: np.ndarray, hyper: ExpertHyper, indices: List[int]) -> ExpertPosteriorCache:
    """Direct factorization of the covariance of the rows listed in indices."""
    indices = [int(i) for i in indices]
    if not indices:
        return ExpertPosteriorCache.empty()
    factor = cholesky_factor(covariance_matrix(X[indices], hyper))
    inverse = linalg.cho_solve(factor, np.eye(len(indices)), check_finite=False)
    inverse = 0.5 * (inverse + inverse.T)
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return ExpertPosteriorCache(assigned_indices=indices, cov_inverse=inverse, log_det=float(log_det))


def _fallback(indices: List[int], rebuild: Optional[Rebuild], pivot: float, fallbacks: int) -> ExpertPosteriorCache:
    if rebuild is None:
        raise NumericFailureError(f"Degenerate rank-1 pivot {pivot:.3e} and no rebuild source")
    logger.warning(f"Rank-1 pivot {pivot:.3e} below threshold, re-factorizing {len(indices)} points")
    cache = rebuild(indices)
    cache.fallbacks = fallbacks + 1
    return cache


def rank1_downdate(
    cache: ExpertPosteriorCache,
    removed_index: int,
    rebuild: Optional[Rebuild] = None,
) -> ExpertPosteriorCache:
    """Inverse covariance of the assigned set with removed_index taken out."""
    position = cache.assigned_indices.index(removed_index)
    remaining = cache.assigned_indices[:position] + cache.assigned_indices[position + 1:]
    if not remaining:
        empty = ExpertPosteriorCache.empty()
        empty.fallbacks = cache.fallbacks
        return empty

    Q = cache.cov_inverse
    a = Q[position, position]
    if a <= PIVOT_THRESHOLD:
        return _fallback(remaining, rebuild, a, cache.fallbacks)

    keep = np.delete(np.arange(len(cache)), position)
    b = Q[position, keep]
    d = Q[np.ix_(keep, keep)]
    inverse = d - np.outer(b, b) / a
    return ExpertPosteriorCache(
        assigned_indices=remaining,
        cov_inverse=0.5 * (inverse + inverse.T),
        log_det=cache.log_det + float(np.log(a)),
        rank1_ops=cache.rank1_ops + 1,
        fallbacks=cache.fallbacks,
    )


def rank1_update(
    cache: ExpertPosteriorCache,
    new_index: int,
    cross_cov: np.ndarray,
    diag: float,
    rebuild: Optional[Rebuild] = None,
) -> ExpertPosteriorCache:
    """
    Inverse covariance after appending one point whose covariances with the
    assigned points are cross_cov and whose own variance is diag.
    """
    if diag <= 0:
        raise InvalidParameterError("New diagonal entry must be positive")
    enlarged = cache.assigned_indices + [int(new_index)]
    if not cache.assigned_indices:
        return ExpertPosteriorCache(
            assigned_indices=enlarged,
            cov_inverse=np.array([[1.0 / diag]]),
            log_det=float(np.log(diag)),
            rank1_ops=cache.rank1_ops + 1,
            fallbacks=cache.fallbacks,
        )

    Q = cache.cov_inverse
    cross_cov = np.asarray(cross_cov, dtype=float)
    Qk = Q @ cross_cov
    schur = diag - cross_cov @ Qk
    if schur <= PIVOT_THRESHOLD:
        return _fallback(enlarged, rebuild, schur, cache.fallbacks)

    a = 1.0 / schur
    n = len(cache)
    inverse = np.empty((n + 1, n + 1))
    inverse[:n, :n] = Q + a * np.outer(Qk, Qk)
    inverse[:n, n] = -a * Qk
    inverse[n, :n] = -a * Qk
    inverse[n, n] = a
    return ExpertPosteriorCache(
        assigned_indices=enlarged,
        cov_inverse=inverse,
        log_det=cache.log_det + float(np.log(schur)),
        rank1_ops=cache.rank1_ops + 1,
        fallbacks=cache.fallbacks,
    )


def cached_predictive(x_star, X: np.ndarray, y: np.ndarray, expert: ExpertState) -> Tuple[float, float]:
    """
    Predictive of a point not in the expert's assigned set, from the cached
    inverse. The variance is the Schur complement the rank-1 update would use.
    """
    hyper = expert.hyper
    cache = expert.cache
    if not cache.assigned_indices:
        return 0.0, hyper.output_scale + hyper.noise_var
    k_star = hyper.output_scale * correlation_matrix(
        np.atleast_2d(x_star), X[cache.assigned_indices], hyper.length_scales
    )[0]
    Qk = cache.cov_inverse @ k_star
    mean = Qk @ y[cache.assigned_indices]
    variance = hyper.output_scale + hyper.noise_var + COVARIANCE_JITTER - k_star @ Qk
    return float(mean), float(max(variance, hyper.noise_var))


def loo_predictive(n: int, y: np.ndarray, expert: ExpertState) -> Tuple[float, float]:
    """Leave-one-out predictive of an assigned point, from the cached inverse."""
    hyper = expert.hyper
    cache = expert.cache
    if len(cache) == 1:
        return 0.0, hyper.output_scale + hyper.noise_var
    position = cache.assigned_indices.index(n)
    Q = cache.cov_inverse
    q = Q[position, position]
    residual = Q[position] @ y[cache.assigned_indices]
    return float(y[n] - residual / q), float(1.0 / q)


def log_predictive_density(n: int, X: np.ndarray, y: np.ndarray, expert: ExpertState) -> float:
    """log p(y_n | other points of the expert, theta)."""
    if n in expert.cache.assigned_indices:
        mean, variance = loo_predictive(n, y, expert)
    else:
        mean, variance = cached_predictive(X[n], X, y, expert)
    return float(-0.5 * (LOG_2PI + np.log(variance) + (y[n] - mean) ** 2 / variance))


def refresh_expert(expert: ExpertState, X: np.ndarray) -> ExpertState:
    fallbacks = expert.cache.fallbacks
    expert.cache = build_cache(X, expert.hyper, expert.cache.assigned_indices)
    expert.cache.fallbacks = fallbacks
    return expert


def _rebuilder(X: np.ndarray, hyper: ExpertHyper) -> Rebuild:
    return lambda indices: build_cache(X, hyper, indices)


def add_point(expert: ExpertState, n: int, X: np.ndarray) -> ExpertState:
    hyper = expert.hyper
    cache = expert.cache
    cross_cov = hyper.output_scale * correlation_matrix(
        np.atleast_2d(X[n]), X[cache.assigned_indices], hyper.length_scales
    )[0] if cache.assigned_indices else np.zeros(0)
    diag = hyper.output_scale + hyper.noise_var + COVARIANCE_JITTER
    expert.cache = rank1_update(cache, n, cross_cov, diag, rebuild=_rebuilder(X, hyper))
    if expert.cache.rank1_ops >= CACHE_REFRESH_EVERY:
        refresh_expert(expert, X)
    return expert


def remove_point(expert: ExpertState, n: int, X: np.ndarray) -> ExpertState:
    expert.cache = rank1_downdate(expert.cache, n, rebuild=_rebuilder(X, expert.hyper))
    if expert.cache.rank1_ops >= CACHE_REFRESH_EVERY:
        refresh_expert(expert, X)
    return expert
