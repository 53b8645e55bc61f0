"""
Baseline mixture of GP experts with an input-dependent Dirichlet-process
gate: kernel-weighted occupation numbers, Neal's auxiliary-variable
assignment update with one auxiliary expert, HMC on the pseudo-posterior of
the kernel width, and the conjugate update of the concentration.
"""

import dataclasses
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from ..config.settings import BURN_IN, THIN, TOTAL_ITERATIONS
from ..utils.logging_utils import get_logger
from ..utils.random_utils import derive_rng
from .errors import InvalidParameterError
from .gibbs import ChainSampler, check_partition
from .gp_expert import LOG_2PI, add_point, build_cache, cached_predictive, remove_point
from .hyper_sampler import gamma_log_prior_grad, hmc_sample
from .models import ExpertState, HmcConfig, ModelTag, PriorTable, TraceRecord

logger = get_logger(__name__)


@dataclass
class RgState:
    assignments: np.ndarray
    kernel_width: float
    concentration: float
    experts: List[ExpertState]
    iteration: int = 0

    @property
    def num_occupied(self) -> int:
        return len(self.experts)


def _sq_dist_row(n: int, X: np.ndarray) -> np.ndarray:
    return np.sum((X - X[n]) ** 2, axis=1)


def occupation_numbers(n: int, assignments: np.ndarray, X: np.ndarray, r: float, n_experts: int) -> np.ndarray:
    """N_{-n,i} for every expert i; sums to N-1."""
    N = len(assignments)
    if N < 2:
        raise InvalidParameterError("Occupation numbers need at least two points")
    if r <= 0:
        raise InvalidParameterError(f"Kernel width must be positive, got {r}")
    others = np.arange(N) != n
    share = softmax(-_sq_dist_row(n, X)[others] / r ** 2)
    return (N - 1) * np.bincount(np.asarray(assignments)[others], weights=share, minlength=n_experts)


def occupation_number(n: int, i: int, assignments: np.ndarray, X: np.ndarray, r: float) -> float:
    n_experts = max(int(np.max(assignments)) + 1, i + 1)
    return float(occupation_numbers(n, assignments, X, r, n_experts)[i])


def gating_shares(x_star, assignments: np.ndarray, X: np.ndarray, r: float, n_experts: int) -> np.ndarray:
    """Kernel-weighted fraction of the training points held by each expert, seen from x_star."""
    sq_dist = np.sum((np.asarray(X, dtype=float) - np.asarray(x_star, dtype=float)) ** 2, axis=1)
    share = softmax(-sq_dist / r ** 2)
    return np.bincount(np.asarray(assignments), weights=share, minlength=n_experts)


def _log_normal(y: float, mean: float, variance: float) -> float:
    return float(-0.5 * (LOG_2PI + np.log(variance) + (y - mean) ** 2 / variance))


def rg_sample_assignment(n: int, state: RgState, priors: PriorTable, rng: np.random.Generator, X: np.ndarray, y: np.ndarray) -> int:
    """
    One auxiliary expert: a singleton's own hyperparameters when point n is
    alone, otherwise a fresh prior draw. Empty experts are removed and the
    remaining ones renumbered.
    """
    assignments = state.assignments
    experts = state.experts
    current = int(assignments[n])
    occupancy = occupation_numbers(n, assignments, X, state.kernel_width, len(experts))

    singleton = experts[current].size == 1
    remove_point(experts[current], n, X)
    if singleton:
        auxiliary = experts[current]
    else:
        auxiliary = ExpertState(priors.draw_hyper(X.shape[1], rng))

    candidates = [i for i, expert in enumerate(experts) if expert.size > 0]
    with np.errstate(divide="ignore"):
        log_weights = [np.log(occupancy[i]) + _log_normal(y[n], *cached_predictive(X[n], X, y, experts[i])) for i in candidates]
        prior_var = auxiliary.hyper.output_scale + auxiliary.hyper.noise_var
        log_weights.append(np.log(state.concentration) + _log_normal(y[n], 0.0, prior_var))
    log_weights = np.array(log_weights)
    probs = np.exp(log_weights - logsumexp(log_weights))
    pick = int(rng.choice(len(probs), p=probs / probs.sum()))

    if pick < len(candidates):
        chosen = candidates[pick]
    elif singleton:
        chosen = current
    else:
        experts.append(auxiliary)
        chosen = len(experts) - 1
    add_point(experts[chosen], n, X)
    assignments[n] = chosen

    if singleton and chosen != current:
        del experts[current]
        assignments[assignments > current] -= 1
        chosen = int(assignments[n])
    return chosen


def rg_r_log_pseudo_posterior_grad(
    r: float, assignments: np.ndarray, X: np.ndarray, prior: Tuple[float, float]
) -> Tuple[float, float]:
    """
    log p(r) + sum_n log N_{-n,s_n}(r) and its derivative. Points alone in
    their expert contribute no r dependence and are skipped.
    """
    assignments = np.asarray(assignments)
    log_density, derivative = gamma_log_prior_grad(r, *prior)
    N = len(assignments)
    for n in range(N):
        others = np.arange(N) != n
        same = others & (assignments == assignments[n])
        if not same.any():
            continue
        sq_dist = _sq_dist_row(n, X)
        logits = -sq_dist / r ** 2
        d_logits = 2.0 * sq_dist / r ** 3
        log_density += np.log(N - 1) + logsumexp(logits[same]) - logsumexp(logits[others])
        derivative += softmax(logits[same]) @ d_logits[same] - softmax(logits[others]) @ d_logits[others]
    return float(log_density), float(derivative)


def beta_mixture_odds(gamma_a: float, num_occupied: int, N: int, rate: float) -> float:
    """Probability of the shape a+|e| branch given rate b - log(phi)."""
    odds = (gamma_a + num_occupied - 1.0) / (N * rate)
    return odds / (1.0 + odds)


def rg_sample_beta(beta: float, num_occupied: int, N: int, gamma_a: float, gamma_b: float, rng: np.random.Generator) -> float:
    """Concentration update under a gamma(a, rate b) prior via the auxiliary phi ~ beta(beta+1, N)."""
    if num_occupied < 1:
        raise InvalidParameterError("At least one occupied expert is required")
    phi = rng.beta(beta + 1.0, N)
    rate = gamma_b - np.log(phi)
    q = beta_mixture_odds(gamma_a, num_occupied, N, rate)
    shape = gamma_a + num_occupied if rng.uniform() < q else gamma_a + num_occupied - 1.0
    return float(rng.gamma(shape, 1.0 / rate))


def share_sorted(assignments: np.ndarray, experts: List[ExpertState]) -> Tuple[np.ndarray, List[ExpertState]]:
    """Relabel experts by descending occupancy, ties kept in index order."""
    order = sorted(range(len(experts)), key=lambda i: -experts[i].size)
    relabel = np.empty(len(experts), dtype=int)
    relabel[order] = np.arange(len(experts))
    return relabel[np.asarray(assignments)], [experts[i] for i in order]


class RgSampler(ChainSampler):
    model = ModelTag.RG

    def initial_state(self) -> RgState:
        N = self.X.shape[0]
        if N < 2:
            raise InvalidParameterError("The baseline sampler needs at least two points")
        hyper = self.priors.mean_hyper(self.dim)
        r_shape, r_scale = self.priors.kernel_width
        b_shape, b_scale = self.priors.rg_beta
        return RgState(
            assignments=np.zeros(N, dtype=int),
            kernel_width=r_shape * r_scale,
            concentration=b_shape * b_scale,
            experts=[ExpertState(hyper, build_cache(self.X, hyper, list(range(N))))],
        )

    def sweep(self, state: RgState, iteration: int) -> RgState:
        for n in range(len(state.assignments)):
            rg_sample_assignment(n, state, self.priors, self.rng, self.X, self.y)

        self.update_expert_hypers(state.experts, iteration)

        def target(r):
            log_density, derivative = rg_r_log_pseudo_posterior_grad(
                r[0], state.assignments, self.X, self.priors.kernel_width
            )
            return log_density, np.array([derivative])

        result = hmc_sample(
            target, [state.kernel_width], self.hmc_config, self.rng, self.adapter("r"), self.adapting(iteration)
        )
        state.kernel_width = float(result.value[0])

        b_shape, b_scale = self.priors.rg_beta
        state.concentration = rg_sample_beta(
            state.concentration, state.num_occupied, len(state.assignments), b_shape, 1.0 / b_scale, self.rng
        )
        check_partition(state.assignments, state.experts)
        state.iteration = iteration + 1
        return state

    def record(self, state: RgState, iteration: int) -> TraceRecord:
        assignments, experts = share_sorted(state.assignments, state.experts)
        return TraceRecord(
            iteration=iteration,
            model=self.model,
            r=state.kernel_width,
            alpha=None,
            beta=state.concentration,
            i_star=len(experts),
            v=[],
            h=[],
            hypers=[dataclasses.replace(expert.hyper) for expert in experts],
            assignments=assignments,
        )


def run_rg_chain(
    dataset,
    priors: PriorTable,
    hmc_config: HmcConfig,
    total_iterations: int = TOTAL_ITERATIONS,
    rng_seed: int = 0,
    burn_in: int = BURN_IN,
    thin: int = THIN,
    rng: Optional[np.random.Generator] = None,
):
    hmc_config = dataclasses.replace(hmc_config, adaptation_iterations=burn_in)
    rng = rng if rng is not None else derive_rng(rng_seed, "chain")
    sampler = RgSampler(dataset.X_norm, dataset.y_std, priors, hmc_config, rng)
    logger.info(f"Starting {sampler.model} chain: N={len(sampler.y)}, D={sampler.dim}, {total_iterations} iterations")
    return sampler.run(total_iterations, burn_in, thin)
