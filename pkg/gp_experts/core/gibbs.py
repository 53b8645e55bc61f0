"""
Within-Gibbs sampler for GP experts gated by a kernel stick-breaking process.

Each sweep updates, in order: the kernel width r (HMC, given fresh B
indicators), the sticks through the truncation loop (A/B, v, h, weights,
slice variables), the integer beta parameters alpha and beta (rejection),
every assignment s_n, and finally the expert hyperparameters (HMC for
occupied experts, prior draws for empty ones).
"""

import dataclasses
import time
from typing import Dict, List, Optional

import numpy as np
from scipy.special import logsumexp

from ..config.settings import BURN_IN, THIN, TOTAL_ITERATIONS
from ..utils.logging_utils import get_logger
from ..utils.random_utils import derive_rng
from .errors import ChainFailure, GpExpertsError, InvalidParameterError, InvalidStateError
from .gp_expert import add_point, build_cache, log_predictive_density, remove_point
from .hyper_sampler import (
    StepSizeAdapter,
    hmc_sample,
    r_log_posterior_grad_ksbp,
    rejection_sample_alpha,
    rejection_sample_beta,
    sample_expert_hypers,
)
from .ksbp_gating import V_CLIP, draw_indicators, slice_candidates, stick_loop
from .models import (
    ChainState,
    ChainTrace,
    ExpertPosteriorCache,
    ExpertState,
    GatingState,
    HmcConfig,
    ModelTag,
    PriorTable,
    SliceAuxiliaries,
    Stick,
    TraceRecord,
)

logger = get_logger(__name__)


def check_partition(assignments: np.ndarray, experts: List[ExpertState]):
    """Every point belongs to exactly the expert its assignment names."""
    covered = np.full(len(assignments), -1)
    for i, expert in enumerate(experts):
        for n in expert.cache.assigned_indices:
            if covered[n] != -1:
                raise InvalidStateError(f"Point {n} held by experts {covered[n]} and {i}")
            covered[n] = i
    if not np.array_equal(covered, np.asarray(assignments)):
        raise InvalidStateError("Expert caches do not match the assignments")


def sample_assignment(
    n: int,
    u_n: float,
    weights_row: np.ndarray,
    experts: List[ExpertState],
    current: int,
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
) -> int:
    """
    Draw s_n among {i : u_n < w_ni} with probability proportional to the
    leave-one-out GP density of y_n under each candidate expert. Moves the
    point between expert caches when it changes.
    """
    candidates = slice_candidates(u_n, weights_row)
    if candidates.size == 0:
        raise InvalidStateError(f"No candidate expert for point {n} (u={u_n:.3e})")
    if candidates.size == 1:
        chosen = int(candidates[0])
    else:
        log_density = np.array([log_predictive_density(n, X, y, experts[i]) for i in candidates])
        probs = np.exp(log_density - logsumexp(log_density))
        chosen = int(candidates[rng.choice(candidates.size, p=probs / probs.sum())])

    if chosen != current:
        remove_point(experts[current], n, X)
        add_point(experts[chosen], n, X)
    return chosen


def resample_empty_expert_hypers(experts: List[ExpertState], priors: PriorTable, rng: np.random.Generator) -> List[ExpertState]:
    for expert in experts:
        if expert.size == 0:
            expert.hyper = priors.draw_hyper(expert.hyper.dim, rng)
            expert.cache = ExpertPosteriorCache.empty()
    return experts


class ChainSampler:
    """
    Shared run loop: sweeps, thinning, progress logging and failure
    tagging. Subclasses provide initial_state, sweep and record.
    """

    model = None

    def __init__(self, X: np.ndarray, y: np.ndarray, priors: PriorTable, hmc_config: HmcConfig, rng: np.random.Generator):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise InvalidParameterError(f"X {self.X.shape} and y {self.y.shape} do not match")
        self.priors = priors
        self.hmc_config = hmc_config
        self.rng = rng
        self.adapters: Dict[str, StepSizeAdapter] = {}

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def adapter(self, name: str) -> StepSizeAdapter:
        if name not in self.adapters:
            self.adapters[name] = StepSizeAdapter(self.hmc_config)
        return self.adapters[name]

    def adapting(self, iteration: int) -> bool:
        return self.hmc_config.dual_averaging_enabled and iteration < self.hmc_config.adaptation_iterations

    def initial_state(self):
        raise NotImplementedError

    def sweep(self, state, iteration: int):
        raise NotImplementedError

    def record(self, state, iteration: int) -> TraceRecord:
        raise NotImplementedError

    def update_expert_hypers(self, experts: List[ExpertState], iteration: int):
        adapt = self.adapting(iteration)
        resample_empty_expert_hypers(experts, self.priors, self.rng)
        for expert in experts:
            if expert.size:
                sample_expert_hypers(
                    expert, self.X, self.y, self.priors, self.hmc_config, self.rng, self.adapter("theta"), adapt
                )

    def run(self, total_iterations: int, burn_in: int, thin: int) -> ChainTrace:
        if not 0 <= burn_in < total_iterations:
            raise InvalidParameterError(f"burn_in={burn_in} must lie in [0, {total_iterations})")
        if thin < 1 or (total_iterations - burn_in) % thin:
            raise InvalidParameterError(f"thin={thin} must divide {total_iterations - burn_in}")

        trace = ChainTrace(model=self.model, total_iterations=total_iterations, burn_in=burn_in, stride=thin)
        report_every = max(total_iterations // 10, 1)
        started = time.time()
        state = self.initial_state()
        for iteration in range(total_iterations):
            try:
                state = self.sweep(state, iteration)
            except GpExpertsError as e:
                raise ChainFailure(self.model, iteration, e) from e
            if iteration >= burn_in and (iteration - burn_in + 1) % thin == 0:
                trace.records.append(self.record(state, iteration))
            if (iteration + 1) % report_every == 0:
                logger.info(
                    f"{self.model}: iteration {iteration + 1}/{total_iterations} "
                    f"({time.time() - started:.1f}s)"
                )

        for name, adapter in self.adapters.items():
            trace.acceptance[name] = adapter.acceptance_rate
            if adapter.nonfinite:
                logger.warning(f"{self.model}: {adapter.nonfinite} HMC proposals for {name} had non-finite density")
        return trace


class KsbpGibbsSampler(ChainSampler):
    model = ModelTag.GPKSBP

    def initial_state(self) -> ChainState:
        N = self.X.shape[0]
        assignments = np.zeros(N, dtype=int)
        shape, scale = self.priors.kernel_width
        v = float(np.clip(self.rng.beta(1.0, 1.0), V_CLIP, 1.0 - V_CLIP))
        gating = GatingState(
            kernel_width=shape * scale,
            alpha=1,
            beta_param=1,
            sticks=[Stick(v=v, h=self.rng.uniform(size=self.dim))],
            truncation_level=1,
        )
        hyper = self.priors.mean_hyper(self.dim)
        experts = [ExpertState(hyper, build_cache(self.X, hyper, list(range(N))))]
        return ChainState(assignments, gating, SliceAuxiliaries(u=np.zeros(N)), experts)

    def _resize_experts(self, experts: List[ExpertState], size: int) -> List[ExpertState]:
        for dropped in experts[size:]:
            if dropped.size:
                raise InvalidStateError("An expert beyond the truncation level still holds points")
        experts = experts[:size]
        while len(experts) < size:
            experts.append(ExpertState(self.priors.draw_hyper(self.dim, self.rng)))
        return experts

    def update_kernel_width(self, gating: GatingState, assignments: np.ndarray, iteration: int) -> GatingState:
        indicators = draw_indicators(self.X, gating, assignments, self.rng)
        h_list = [stick.h for stick in gating.sticks[:gating.truncation_level]]

        def target(r):
            log_density, derivative = r_log_posterior_grad_ksbp(
                r[0], indicators, h_list, self.X, self.priors.kernel_width
            )
            return log_density, np.array([derivative])

        result = hmc_sample(
            target, [gating.kernel_width], self.hmc_config, self.rng, self.adapter("r"), self.adapting(iteration)
        )
        gating.kernel_width = float(result.value[0])
        return gating

    def sweep(self, state: ChainState, iteration: int) -> ChainState:
        adapt = self.adapting(iteration)
        assignments = state.assignments.copy()
        gating = self.update_kernel_width(state.gating, assignments, iteration)

        loop = stick_loop(self.X, gating, assignments, self.rng, self.hmc_config, self.adapter("h"), adapt)
        gating = loop.state

        v = gating.v
        geometric = self.priors.geometric
        gating.alpha = rejection_sample_alpha(gating.beta_param, v, geometric.p_alpha, self.rng)
        gating.beta_param = rejection_sample_beta(gating.alpha, v, geometric.p_beta, self.rng)

        experts = self._resize_experts(state.experts, gating.truncation_level)
        for n in range(len(assignments)):
            assignments[n] = sample_assignment(
                n, loop.aux.u[n], loop.weights[n], experts, assignments[n], self.X, self.y, self.rng
            )

        self.update_expert_hypers(experts, iteration)
        check_partition(assignments, experts)
        return ChainState(assignments, gating, loop.aux, experts, iteration + 1)

    def record(self, state: ChainState, iteration: int) -> TraceRecord:
        gating = state.gating
        i_star = gating.truncation_level
        return TraceRecord(
            iteration=iteration,
            model=self.model,
            r=gating.kernel_width,
            alpha=float(gating.alpha),
            beta=float(gating.beta_param),
            i_star=i_star,
            v=[float(stick.v) for stick in gating.sticks[:i_star]],
            h=[stick.h.tolist() for stick in gating.sticks[:i_star]],
            hypers=[dataclasses.replace(expert.hyper) for expert in state.experts[:i_star]],
            assignments=state.assignments.copy(),
        )


def run_chain(
    dataset,
    priors: PriorTable,
    hmc_config: HmcConfig,
    total_iterations: int = TOTAL_ITERATIONS,
    rng_seed: int = 0,
    burn_in: int = BURN_IN,
    thin: int = THIN,
    rng: Optional[np.random.Generator] = None,
) -> ChainTrace:
    """
    Run one GPKSBP chain on a pre-processed dataset (normalized X,
    standardized y). Step sizes adapt during burn-in only.
    """
    hmc_config = dataclasses.replace(hmc_config, adaptation_iterations=burn_in)
    rng = rng if rng is not None else derive_rng(rng_seed, "chain")
    sampler = KsbpGibbsSampler(dataset.X_norm, dataset.y_std, priors, hmc_config, rng)
    logger.info(f"Starting {sampler.model} chain: N={len(sampler.y)}, D={sampler.dim}, {total_iterations} iterations")
    return sampler.run(total_iterations, burn_in, thin)
