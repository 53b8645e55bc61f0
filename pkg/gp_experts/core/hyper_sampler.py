"""
Samplers for the shared hyperparameters: HMC with a log change of variables
and dual-averaging step sizes (kernel width r, expert hyperparameters theta),
and the flat-then-geometric envelope rejection sampler for the integer beta
parameters alpha and beta.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from ..config.settings import DA_GAMMA, DA_KAPPA, DA_T0
from ..utils.logging_utils import get_logger
from .errors import (
    GpExpertsError,
    InvalidParameterError,
    NumericFailureError,
    SamplerDiagnosticError,
)
from .gp_expert import build_cache, lml_and_gradient
from .models import ExpertHyper, ExpertPosteriorCache, ExpertState, HmcConfig, PriorTable, StickIndicators

logger = get_logger(__name__)

LogDensityGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]

MAX_PEAK_SEARCH = 1_000_000
MAX_REJECTION_ATTEMPTS = 100_000


@dataclass
class HmcResult:
    value: np.ndarray
    accepted: bool
    accept_prob: float
    step_size: float


class StepSizeAdapter:
    """
    Dual averaging of the HMC step size toward a target acceptance rate,
    never exceeding the configured cap. Frozen at the averaged step size
    once adaptation stops.
    """

    def __init__(self, config: HmcConfig):
        self.config = config
        self.step_size = min(config.initial_step, config.step_cap)
        self.mu = np.log(10.0 * self.step_size)
        self.h_bar = 0.0
        self.log_avg_step = np.log(self.step_size)
        self.t = 0
        self.frozen = False
        self.attempts = 0
        self.accepts = 0
        self.nonfinite = 0

    def update(self, accept_prob: float):
        if self.frozen or not self.config.dual_averaging_enabled:
            return
        self.t += 1
        eta = 1.0 / (self.t + DA_T0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.config.target_accept - accept_prob)
        log_step = self.mu - np.sqrt(self.t) / DA_GAMMA * self.h_bar
        log_step = min(log_step, np.log(self.config.step_cap))
        self.step_size = min(float(np.exp(log_step)), self.config.step_cap)
        weight = self.t ** (-DA_KAPPA)
        self.log_avg_step = weight * log_step + (1.0 - weight) * self.log_avg_step

    def freeze(self):
        if self.frozen:
            return
        if self.config.dual_averaging_enabled and self.t > 0:
            self.step_size = float(min(np.exp(self.log_avg_step), self.config.step_cap))
        self.frozen = True

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / self.attempts if self.attempts else float("nan")


def _reflect_unit(q: np.ndarray, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Fold q into [0,1] with period 2; momentum flips on an odd number of reflections."""
    folded = np.mod(q, 2.0)
    flipped = folded > 1.0
    return np.where(flipped, 2.0 - folded, folded), np.where(flipped, -p, p)


def leapfrog(
    q: np.ndarray,
    p: np.ndarray,
    log_density_and_grad: LogDensityGrad,
    step_size: float,
    n_steps: int,
    reflect_unit: bool = False,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Leapfrog integration; returns the end point, momentum and log-density."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    log_density, grad = log_density_and_grad(q)
    for _ in range(n_steps):
        p = p + 0.5 * step_size * grad
        q = q + step_size * p
        if not np.all(np.isfinite(q)):
            return q, p, -np.inf
        if reflect_unit:
            q, p = _reflect_unit(q, p)
        log_density, grad = log_density_and_grad(q)
        if not (np.isfinite(log_density) and np.all(np.isfinite(grad))):
            return q, p, -np.inf
        p = p + 0.5 * step_size * grad
    return q, p, log_density


def hmc_transition(
    log_density_and_grad: LogDensityGrad,
    position: np.ndarray,
    step_size: float,
    n_steps: int,
    rng: np.random.Generator,
    reflect_unit: bool = False,
) -> Tuple[np.ndarray, bool, float]:
    position = np.atleast_1d(np.asarray(position, dtype=float))
    current_log_density, _ = log_density_and_grad(position)
    if not np.isfinite(current_log_density):
        raise NumericFailureError("HMC started from a point with non-finite log-density")
    momentum = rng.standard_normal(position.shape)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        proposal, end_momentum, proposal_log_density = leapfrog(
            position, momentum, log_density_and_grad, step_size, n_steps, reflect_unit
        )
        log_ratio = (proposal_log_density - 0.5 * end_momentum @ end_momentum) - (
            current_log_density - 0.5 * momentum @ momentum
        )
    if not np.isfinite(log_ratio):
        rng.uniform()
        return position, False, 0.0
    accept_prob = float(min(1.0, np.exp(min(log_ratio, 0.0))))
    if rng.uniform() < accept_prob:
        return proposal, True, accept_prob
    return position, False, accept_prob


def log_transformed(log_density_and_grad: LogDensityGrad) -> LogDensityGrad:
    """
    Target for w = log(theta): log p(e^w) + sum(w), gradient
    grad_theta * e^w + 1.
    """

    def target(w: np.ndarray) -> Tuple[float, np.ndarray]:
        with np.errstate(over="ignore"):
            theta = np.exp(w)
        if not np.all(np.isfinite(theta)) or np.any(theta <= 0):
            return -np.inf, np.full_like(w, np.nan)
        log_density, grad = log_density_and_grad(theta)
        return float(log_density + np.sum(w)), np.asarray(grad) * theta + 1.0

    return target


def _step_for(adapter: Optional[StepSizeAdapter], config: HmcConfig) -> float:
    if adapter is None:
        return min(config.initial_step, config.step_cap)
    return adapter.step_size


def _run_adapted(
    target: LogDensityGrad,
    start: np.ndarray,
    config: HmcConfig,
    rng: np.random.Generator,
    adapter: Optional[StepSizeAdapter],
    adapt: bool,
    reflect_unit: bool,
) -> Tuple[np.ndarray, bool, float, float]:
    if adapter is not None and not adapt:
        adapter.freeze()
    step = _step_for(adapter, config)
    value, accepted, accept_prob = hmc_transition(
        target, start, step, config.leapfrog_steps, rng, reflect_unit=reflect_unit
    )
    if adapter is not None:
        adapter.attempts += 1
        adapter.accepts += int(accepted)
        if accept_prob == 0.0 and not accepted:
            adapter.nonfinite += 1
        if adapt:
            adapter.update(accept_prob)
    return value, accepted, accept_prob, step


def hmc_sample(
    log_density_and_grad: LogDensityGrad,
    current_value,
    config: HmcConfig,
    rng: np.random.Generator,
    adapter: Optional[StepSizeAdapter] = None,
    adapt: bool = False,
) -> HmcResult:
    """
    One HMC transition for a positive parameter vector. The density and
    gradient are given in the original parameterization; the trajectory runs
    on log(theta).
    """
    current_value = np.atleast_1d(np.asarray(current_value, dtype=float))
    if np.any(current_value <= 0):
        raise InvalidParameterError("HMC on the log scale needs positive values")
    w, accepted, accept_prob, step = _run_adapted(
        log_transformed(log_density_and_grad), np.log(current_value), config, rng, adapter, adapt, False
    )
    return HmcResult(np.exp(w), accepted, accept_prob, step)


def hmc_sample_unit_cube(
    log_density_and_grad: LogDensityGrad,
    current_value,
    config: HmcConfig,
    rng: np.random.Generator,
    adapter: Optional[StepSizeAdapter] = None,
    adapt: bool = False,
) -> HmcResult:
    """One HMC transition for a point in [0,1]^D, reflecting at the faces."""
    value, accepted, accept_prob, step = _run_adapted(
        log_density_and_grad, np.asarray(current_value, dtype=float), config, rng, adapter, adapt, True
    )
    return HmcResult(value, accepted, accept_prob, step)


def gamma_log_prior_grad(theta, shape: float, scale: float):
    """Gamma(shape, scale) log-density up to a constant, and its derivative."""
    theta = np.asarray(theta, dtype=float)
    log_density = np.sum((shape - 1.0) * np.log(theta) - theta / scale)
    derivative = (shape - 1.0) / theta - 1.0 / scale
    if derivative.ndim == 0:
        return float(log_density), float(derivative)
    return float(log_density), derivative


def r_log_posterior_grad_ksbp(
    r: float,
    indicators: Sequence[StickIndicators],
    h_list: Sequence[np.ndarray],
    X: np.ndarray,
    prior: Tuple[float, float],
) -> Tuple[float, float]:
    """log p(r | B) up to a constant and d/dr, using d kappa/dr = 2 kappa |x-h|^2 / r^3."""
    r = float(np.asarray(r).reshape(-1)[0])
    log_density, derivative = gamma_log_prior_grad(r, *prior)
    for stick_indicators, h in zip(indicators, h_list):
        if stick_indicators.indices.size == 0:
            continue
        sq_dist = np.sum((X[stick_indicators.indices] - h) ** 2, axis=1)
        z = sq_dist / r ** 2
        d_log_kappa = 2.0 * sq_dist / r ** 3
        B = stick_indicators.B.astype(bool)
        with np.errstate(divide="ignore"):
            log_one_minus = np.log(-np.expm1(-z[~B]))
            odds = 1.0 / np.expm1(z[~B])
        log_density += -np.sum(z[B]) + np.sum(log_one_minus)
        derivative += np.sum(d_log_kappa[B]) - np.sum(odds * d_log_kappa[~B])
    return float(log_density), float(derivative)


def _peak_from_log(other: int, i_star: int, log_c: float) -> int:
    """Smallest k >= 1 with (1 + other/k)^i_star * exp(log_c) < 1."""
    if not np.isfinite(log_c):
        return 1

    def below_one(k: int) -> bool:
        return i_star * np.log1p(other / k) + log_c < 0.0

    threshold = -log_c / i_star
    guess = other / np.expm1(threshold)
    if not np.isfinite(guess) or guess > MAX_PEAK_SEARCH:
        raise SamplerDiagnosticError(f"Peak search exceeded {MAX_PEAK_SEARCH} (other={other}, i*={i_star})")
    k = max(1, int(np.floor(guess)) + 1)
    while k > 1 and below_one(k - 1):
        k -= 1
    steps = 0
    while not below_one(k):
        k += 1
        steps += 1
        if steps > MAX_PEAK_SEARCH:
            raise SamplerDiagnosticError("Peak search did not terminate")
    return k


def alpha_peak(beta_param: int, i_star: int, prod_v: float, p_alpha: float) -> int:
    if not 0 < prod_v < 1:
        raise InvalidParameterError("prod_v must lie in (0, 1)")
    if i_star < 1:
        raise InvalidParameterError("i_star must be at least 1")
    return _peak_from_log(beta_param, i_star, np.log1p(-p_alpha) + np.log(prod_v))


def conditional_log_mass(k, other: int, i_star: int, log_c: float):
    """log of ((k+other-1)!/(k-1)!)^i_star * c^(k-1), up to a constant."""
    k = np.asarray(k, dtype=float)
    return i_star * (gammaln(k + other) - gammaln(k)) + (k - 1.0) * log_c


@dataclass
class IntegerEnvelope:
    """Flat up to the peak, geometric decay with ratio phi after it."""

    peak: int
    log_phi: float
    log_mass_peak: float

    def log_height(self, k):
        k = np.asarray(k, dtype=float)
        return self.log_mass_peak + np.maximum(k - self.peak, 0.0) * self.log_phi

    @property
    def flat_probability(self) -> float:
        tail = np.exp(self.log_phi) / -np.expm1(self.log_phi)
        return self.peak / (self.peak + tail)


def build_envelope(other: int, i_star: int, log_c: float) -> IntegerEnvelope:
    peak = _peak_from_log(other, i_star, log_c)
    log_phi = i_star * np.log1p(other / peak) + log_c
    return IntegerEnvelope(peak, float(log_phi), float(conditional_log_mass(peak, other, i_star, log_c)))


def _rejection_sample_integer(other: int, i_star: int, log_c: float, rng: np.random.Generator, label: str) -> int:
    if not np.isfinite(log_c):
        return 1
    envelope = build_envelope(other, i_star, log_c)
    flat_probability = envelope.flat_probability
    tail_success = -np.expm1(envelope.log_phi)
    for _ in range(MAX_REJECTION_ATTEMPTS):
        if rng.uniform() < flat_probability:
            proposal = int(rng.integers(1, envelope.peak + 1))
        else:
            proposal = envelope.peak + int(rng.geometric(tail_success))
        log_ratio = conditional_log_mass(proposal, other, i_star, log_c) - envelope.log_height(proposal)
        if np.log(rng.uniform()) <= log_ratio:
            return proposal
    raise SamplerDiagnosticError(
        f"Rejection sampler for {label} accepted nothing in {MAX_REJECTION_ATTEMPTS} attempts"
    )


def alpha_log_constant(v_list: Sequence[float], p_alpha: float) -> float:
    return float(np.log1p(-p_alpha) + np.sum(np.log(v_list)))


def beta_log_constant(v_list: Sequence[float], p_beta: float) -> float:
    return float(np.log1p(-p_beta) + np.sum(np.log1p(-np.asarray(v_list, dtype=float))))


def rejection_sample_alpha(beta_param: int, v_list: Sequence[float], p_alpha: float, rng: np.random.Generator) -> int:
    if len(v_list) == 0:
        raise InvalidParameterError("Sampling alpha needs at least one stick")
    return _rejection_sample_integer(int(beta_param), len(v_list), alpha_log_constant(v_list, p_alpha), rng, "alpha")


def rejection_sample_beta(alpha: int, v_list: Sequence[float], p_beta: float, rng: np.random.Generator) -> int:
    if len(v_list) == 0:
        raise InvalidParameterError("Sampling beta needs at least one stick")
    return _rejection_sample_integer(int(alpha), len(v_list), beta_log_constant(v_list, p_beta), rng, "beta")


def expert_log_posterior(X: np.ndarray, y: np.ndarray, priors: PriorTable) -> LogDensityGrad:
    """log p(theta | y_i) and gradient over (sigma^2, l, [tau^2])."""
    fixed_noise = priors.fixed_noise_var

    def target(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        try:
            hyper = ExpertHyper.from_vector(theta, noise_var=fixed_noise)
            log_lik, grad = lml_and_gradient(X, y, hyper)
        except GpExpertsError:
            return -np.inf, np.full_like(theta, np.nan)
        if fixed_noise is not None:
            grad = grad[:-1]
        log_prior, d_sigma2 = gamma_log_prior_grad(hyper.output_scale, *priors.sigma2)
        lp_lengths, d_lengths = gamma_log_prior_grad(hyper.length_scales, *priors.length_scale)
        prior_grad: List = [[d_sigma2], np.atleast_1d(d_lengths)]
        log_prior += lp_lengths
        if fixed_noise is None:
            lp_noise, d_noise = gamma_log_prior_grad(hyper.noise_var, *priors.noise_var)
            log_prior += lp_noise
            prior_grad.append([d_noise])
        return log_lik + log_prior, grad + np.concatenate(prior_grad)

    return target


def sample_expert_hypers(
    expert: ExpertState,
    X: np.ndarray,
    y: np.ndarray,
    priors: PriorTable,
    config: HmcConfig,
    rng: np.random.Generator,
    adapter: Optional[StepSizeAdapter] = None,
    adapt: bool = False,
) -> Optional[HmcResult]:
    """
    theta_i | y_i by one joint HMC trajectory; an expert with no data draws
    straight from the priors. The cache is re-factorized under the new theta.
    """
    indices = expert.cache.assigned_indices
    if not indices:
        expert.hyper = priors.draw_hyper(expert.hyper.dim, rng)
        expert.cache = ExpertPosteriorCache.empty()
        return None

    include_noise = priors.fixed_noise_var is None
    target = expert_log_posterior(X[indices], y[indices], priors)
    result = hmc_sample(target, expert.hyper.to_vector(include_noise), config, rng, adapter, adapt)
    if result.accepted:
        fallbacks = expert.cache.fallbacks
        expert.hyper = ExpertHyper.from_vector(result.value, noise_var=priors.fixed_noise_var)
        expert.cache = build_cache(X, expert.hyper, indices)
        expert.cache.fallbacks = fallbacks
    return result
