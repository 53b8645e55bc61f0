"""
Posterior predictive mixtures built from retained chain records, and the
RMSE, NLPD and CRPS scores computed from them.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import norm

from ..utils.logging_utils import get_logger
from .errors import InvalidParameterError
from .gp_expert import cholesky_factor, correlation_matrix, covariance_matrix
from .ksbp_gating import weights_and_remainder
from .models import ChainTrace, ExpertHyper, ModelTag, PriorTable, TraceRecord
from .rg_baseline import gating_shares

logger = get_logger(__name__)

DENSITY_FLOOR = 1e-300


@dataclass
class PredictiveMixture:
    """
    Gaussian mixture over the last axis. Arrays are (K,) for one test point
    or (T, K) for T points; the last component is the fresh-prior one.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        if not (self.weights.shape == self.means.shape == self.variances.shape):
            raise InvalidParameterError("Mixture arrays must share one shape")
        if np.any(self.variances <= 0):
            raise InvalidParameterError("Mixture variances must be positive")
        if np.any(self.weights < 0) or np.any(np.abs(self.weights.sum(axis=-1) - 1.0) > 1e-10):
            raise InvalidParameterError("Mixture weights must be nonnegative and sum to 1")

    def mean(self):
        return np.sum(self.weights * self.means, axis=-1)

    def variance(self):
        mean = self.mean()
        second = np.sum(self.weights * (self.variances + self.means ** 2), axis=-1)
        return second - mean ** 2

    def pdf(self, y):
        y = np.asarray(y, dtype=float)[..., None]
        return np.sum(self.weights * norm.pdf(y, self.means, np.sqrt(self.variances)), axis=-1)

    def cdf(self, y):
        y = np.asarray(y, dtype=float)[..., None]
        return np.sum(self.weights * norm.cdf(y, self.means, np.sqrt(self.variances)), axis=-1)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.weights.ndim != 1:
            raise InvalidParameterError("Sampling is defined for a single test point")
        component = rng.choice(self.weights.size, size=size, p=self.weights / self.weights.sum())
        return rng.normal(self.means[component], np.sqrt(self.variances[component]))

    def rescaled(self, scale: float, shift: float) -> "PredictiveMixture":
        """Mixture of scale * Y + shift."""
        return PredictiveMixture(self.weights, self.means * scale + shift, self.variances * scale ** 2)


class RecordPredictor:
    """
    Predictive mixtures of one retained record at any number of test points.
    Factorizations are done once per expert; the fresh-prior component's
    hyperparameters are drawn once per record.
    """

    def __init__(self, record: TraceRecord, X: np.ndarray, y: np.ndarray, priors: PriorTable, rng: np.random.Generator):
        self.record = record
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.fresh: ExpertHyper = priors.draw_hyper(self.X.shape[1], rng)
        self._experts = [self._factorize(i, hyper) for i, hyper in enumerate(record.hypers)]

    def _factorize(self, i: int, hyper: ExpertHyper):
        indices = np.flatnonzero(self.record.assignments == i)
        if indices.size == 0:
            return hyper, indices, None, None
        factor = cholesky_factor(covariance_matrix(self.X[indices], hyper))
        return hyper, indices, factor, linalg.cho_solve(factor, self.y[indices], check_finite=False)

    def _expert_predictive(self, X_star: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        T = X_star.shape[0]
        means = np.zeros((T, len(self._experts)))
        variances = np.zeros((T, len(self._experts)))
        for i, (hyper, indices, factor, weights) in enumerate(self._experts):
            prior_var = hyper.output_scale + hyper.noise_var
            if factor is None:
                variances[:, i] = prior_var
                continue
            k_star = hyper.output_scale * correlation_matrix(X_star, self.X[indices], hyper.length_scales)
            means[:, i] = k_star @ weights
            reduction = np.sum(k_star * linalg.cho_solve(factor, k_star.T, check_finite=False).T, axis=1)
            variances[:, i] = np.maximum(prior_var - reduction, hyper.noise_var)
        return means, variances

    def gate(self, X_star: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Expert weights (T, K) and the fresh-prior weight (T,)."""
        record = self.record
        if record.model == ModelTag.RG:
            N = len(record.assignments)
            shares = np.vstack([
                gating_shares(x, record.assignments, self.X, record.r, len(record.hypers)) for x in X_star
            ])
            return N * shares / (N + record.beta), np.full(X_star.shape[0], record.beta / (N + record.beta))
        return weights_and_remainder(X_star, np.asarray(record.v), np.asarray(record.h), record.r)

    def predict(self, X_star) -> PredictiveMixture:
        X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
        expert_weights, remainder = self.gate(X_star)
        means, variances = self._expert_predictive(X_star)
        T = X_star.shape[0]
        fresh_var = self.fresh.output_scale + self.fresh.noise_var
        weights = np.hstack([expert_weights, remainder[:, None]])
        weights = weights / weights.sum(axis=1, keepdims=True)
        return PredictiveMixture(
            weights,
            np.hstack([means, np.zeros((T, 1))]),
            np.hstack([variances, np.full((T, 1), fresh_var)]),
        )


def predictive_mixture(x_star, record: TraceRecord, X: np.ndarray, y: np.ndarray, priors: PriorTable, rng: np.random.Generator) -> PredictiveMixture:
    mixture = RecordPredictor(record, X, y, priors, rng).predict(np.atleast_2d(x_star))
    return PredictiveMixture(mixture.weights[0], mixture.means[0], mixture.variances[0])


def rmse(predictions, truths) -> float:
    predictions = np.asarray(predictions, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if predictions.size == 0:
        raise InvalidParameterError("RMSE of an empty set")
    if predictions.shape != truths.shape:
        raise InvalidParameterError(f"Shapes differ: {predictions.shape} vs {truths.shape}")
    return float(np.sqrt(np.mean((predictions - truths) ** 2)))


def nlpd(per_record_densities) -> float:
    """Mean over test points of -log of the record-averaged predictive density."""
    densities = np.atleast_2d(np.asarray(per_record_densities, dtype=float))
    if densities.size == 0:
        raise InvalidParameterError("NLPD of an empty set")
    averaged = densities.mean(axis=0)
    clamped = averaged < DENSITY_FLOOR
    if clamped.any():
        logger.warning(f"NLPD: {int(clamped.sum())} test densities clamped at {DENSITY_FLOOR}")
    return float(-np.mean(np.log(np.maximum(averaged, DENSITY_FLOOR))))


def psi(mu, variance):
    """E|Z| for Z ~ N(mu, variance)."""
    sigma = np.sqrt(variance)
    z = mu / sigma
    return 2.0 * sigma * norm.pdf(z) + mu * (2.0 * norm.cdf(z) - 1.0)


def crps(mixture: PredictiveMixture, y):
    """Closed-form CRPS of a Gaussian mixture; vectorized over test points."""
    y = np.asarray(y, dtype=float)[..., None]
    w = mixture.weights
    first = np.sum(w * psi(y - mixture.means, mixture.variances), axis=-1)
    mean_diff = mixture.means[..., :, None] - mixture.means[..., None, :]
    var_sum = mixture.variances[..., :, None] + mixture.variances[..., None, :]
    pair_weights = w[..., :, None] * w[..., None, :]
    second = 0.5 * np.sum(pair_weights * psi(mean_diff, var_sum), axis=(-2, -1))
    return first - second


@dataclass
class TraceScores:
    rmse: float
    nlpd: float
    crps: float
    records: int
    clamped: int
    mean_i_star: float


def evaluate_trace(
    trace: ChainTrace,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    y_test_raw: np.ndarray,
    transform,
    priors: PriorTable,
    rng: np.random.Generator,
    per_record_rmse: bool = False,
) -> TraceScores:
    """
    Scores in raw response units. RMSE uses the grand predictive mean over
    records unless per_record_rmse is set, in which case per-record RMSEs are
    averaged. CRPS is averaged over records and test points.
    """
    if not trace.records:
        raise InvalidParameterError("Trace has no retained records")
    y_test_raw = np.asarray(y_test_raw, dtype=float)
    means: List[np.ndarray] = []
    densities: List[np.ndarray] = []
    scores: List[np.ndarray] = []
    for record in trace.records:
        mixture = RecordPredictor(record, X_train, y_train, priors, rng).predict(X_test)
        mixture = mixture.rescaled(transform.y_sd, transform.y_mean)
        means.append(mixture.mean())
        densities.append(mixture.pdf(y_test_raw))
        scores.append(crps(mixture, y_test_raw))

    means = np.vstack(means)
    if per_record_rmse:
        rmse_value = float(np.mean([rmse(row, y_test_raw) for row in means]))
    else:
        rmse_value = rmse(means.mean(axis=0), y_test_raw)
    densities = np.vstack(densities)
    return TraceScores(
        rmse=rmse_value,
        nlpd=nlpd(densities),
        crps=float(np.mean(scores)),
        records=len(trace.records),
        clamped=int(np.sum(densities.mean(axis=0) < DENSITY_FLOOR)),
        mean_i_star=float(np.mean([record.i_star for record in trace.records])),
    )
