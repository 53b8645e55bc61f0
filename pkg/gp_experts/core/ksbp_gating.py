"""
Kernel stick-breaking gating: input-dependent mixture weights, the A/B
indicator augmentation, conjugate v updates, the HMC target for stick
locations h, slice variables and the random truncation loop.

Sticks and data points are numbered from 0, so "s_n >= i" keeps its usual
meaning: point n has not broken off before stick i.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..config.settings import MAX_TRUNCATION
from ..utils.logging_utils import get_logger
from .errors import InvalidParameterError, InvalidStateError, RunawayTruncationError
from .hyper_sampler import StepSizeAdapter, hmc_sample_unit_cube
from .models import GatingState, HmcConfig, SliceAuxiliaries, Stick, StickIndicators

logger = get_logger(__name__)

V_CLIP = 1e-12


def kernel(x, h, r: float):
    """exp(-|x - h|^2 / r^2); x may hold one point per row."""
    if r <= 0:
        raise InvalidParameterError(f"Kernel width must be positive, got {r}")
    x = np.asarray(x, dtype=float)
    sq_dist = np.sum((x - np.asarray(h, dtype=float)) ** 2, axis=-1)
    return np.exp(-sq_dist / r ** 2)


def kernel_matrix(X: np.ndarray, H: np.ndarray, r: float) -> np.ndarray:
    """kappa[n, i] = kernel(X[n], H[i], r)."""
    if r <= 0:
        raise InvalidParameterError(f"Kernel width must be positive, got {r}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.size == 0:
        return np.zeros((X.shape[0], 0))
    sq_dist = np.sum((X[:, None, :] - H[None, :, :]) ** 2, axis=-1)
    return np.exp(-sq_dist / r ** 2)


def weights_and_remainder(X: np.ndarray, v: np.ndarray, H: np.ndarray, r: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Weight matrix w[n, i] for every stick and the mass left over after the
    last one, prod_i (1 - v_i kappa_ni).
    """
    breaks = np.asarray(v, dtype=float)[None, :] * kernel_matrix(X, H, r)
    survival = np.cumprod(1.0 - breaks, axis=1)
    before = np.hstack([np.ones((breaks.shape[0], 1)), survival[:, :-1]])
    remainder = survival[:, -1] if survival.shape[1] else np.ones(breaks.shape[0])
    return breaks * before, remainder


def mixture_weights(x, state: GatingState, up_to: Optional[int] = None) -> np.ndarray:
    up_to = state.truncation_level if up_to is None else up_to
    if up_to > len(state.sticks):
        raise InvalidParameterError(f"Only {len(state.sticks)} sticks, asked for {up_to}")
    if up_to == 0:
        return np.zeros(0)
    weights, _ = weights_and_remainder(
        np.atleast_2d(x), state.v[:up_to], state.h[:up_to], state.kernel_width
    )
    return weights[0]


def sample_aux_AB(s_n: int, i: int, v_i: float, kappa_ni: float, rng: np.random.Generator) -> Tuple[int, int]:
    A, B = sample_aux_AB_column(np.array([s_n]), i, v_i, np.array([kappa_ni]), rng)
    return int(A[0]), int(B[0])


def sample_aux_AB_column(
    assignments: np.ndarray,
    i: int,
    v_i: float,
    kappa: np.ndarray,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    (A, B) for every point with s_n >= i. Points assigned to stick i are
    (1, 1); the others draw from the cells (1,0), (0,1), (0,0) with weights
    v(1-k), (1-v)k, (1-v)(1-k).
    """
    assignments = np.asarray(assignments)
    if np.any(assignments < i):
        raise InvalidStateError(f"Indicators for stick {i} requested for a point with s_n < {i}")
    kappa = np.asarray(kappa, dtype=float)
    A = np.ones(assignments.size, dtype=int)
    B = np.ones(assignments.size, dtype=int)

    passed = assignments > i
    if not passed.any():
        return A, B
    k = kappa[passed]
    cell_10 = v_i * (1.0 - k)
    cell_01 = (1.0 - v_i) * k
    total = 1.0 - v_i * k
    if np.any(total <= 0):
        raise InvalidStateError(f"Stick {i} broke with certainty for a point that passed it")
    draw = rng.uniform(size=k.size) * total
    a_col = (draw < cell_10).astype(int)
    b_col = ((draw >= cell_10) & (draw < cell_10 + cell_01)).astype(int)
    A[passed] = a_col
    B[passed] = b_col
    return A, B


def draw_indicators(
    X: np.ndarray, state: GatingState, assignments: np.ndarray, rng: np.random.Generator
) -> List[StickIndicators]:
    """Fresh A/B for every instantiated stick given the current state."""
    indicators = []
    for i in range(state.truncation_level):
        members = np.flatnonzero(assignments >= i)
        stick = state.sticks[i]
        kappa = kernel(X[members], stick.h, state.kernel_width) if members.size else np.zeros(0)
        A, B = sample_aux_AB_column(assignments[members], i, stick.v, kappa, rng)
        indicators.append(StickIndicators(members, A, B))
    return indicators


def posterior_v_params(
    i: int, aux: SliceAuxiliaries, assignments: np.ndarray, alpha: float, beta_param: float
) -> Tuple[float, float]:
    if i >= len(aux.indicators) or aux.indicators[i].indices.size == 0:
        return float(alpha), float(beta_param)
    indicators = aux.indicators[i]
    expected = np.flatnonzero(np.asarray(assignments) >= i)
    if not np.array_equal(np.sort(indicators.indices), expected):
        raise InvalidStateError(f"A indicators of stick {i} do not cover the points with s_n >= {i}")
    successes = int(np.sum(indicators.A))
    return float(alpha + successes), float(beta_param + indicators.A.size - successes)


def h_log_posterior_grad(h, B_column, X_subset, r: float) -> Tuple[float, np.ndarray]:
    """
    log prod kappa^B (1 - kappa)^(1-B) and its gradient in h. The uniform
    prior on the unit cube adds nothing inside it.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0) or np.any(h > 1):
        return -np.inf, np.zeros_like(h)
    B = np.asarray(B_column).astype(bool)
    if B.size == 0:
        return 0.0, np.zeros_like(h)

    diff = np.atleast_2d(np.asarray(X_subset, dtype=float)) - h
    z = np.sum(diff ** 2, axis=1) / r ** 2
    d_log_kappa = 2.0 * diff / r ** 2
    with np.errstate(divide="ignore"):
        log_one_minus = np.log(-np.expm1(-z[~B]))
        odds = 1.0 / np.expm1(z[~B])
    log_density = -np.sum(z[B]) + np.sum(log_one_minus)
    if not np.isfinite(log_density):
        return -np.inf, np.zeros_like(h)
    gradient = d_log_kappa[B].sum(axis=0) - (odds[:, None] * d_log_kappa[~B]).sum(axis=0)
    return float(log_density), gradient


def sample_u(w_n_sn, rng: np.random.Generator):
    w = np.asarray(w_n_sn, dtype=float)
    if np.any(~(w > 0)):
        raise InvalidStateError("Slice variable needs a positive weight at the current assignment")
    draw = rng.uniform(0.0, w)
    return float(draw) if w.ndim == 0 else draw


def slice_candidates(u_n: float, weights_row: np.ndarray) -> np.ndarray:
    return np.flatnonzero(u_n < np.asarray(weights_row))


@dataclass
class StickLoopResult:
    state: GatingState
    aux: SliceAuxiliaries
    weights: np.ndarray
    remainder: np.ndarray

    @property
    def truncation_level(self) -> int:
        return self.state.truncation_level


def _prior_stick(alpha: float, beta_param: float, dim: int, rng: np.random.Generator) -> Stick:
    v = float(np.clip(rng.beta(alpha, beta_param), V_CLIP, 1.0 - V_CLIP))
    return Stick(v=v, h=rng.uniform(size=dim))


def stick_loop(
    X: np.ndarray,
    state: GatingState,
    assignments: np.ndarray,
    rng: np.random.Generator,
    hmc_config: HmcConfig,
    adapter: Optional[StepSizeAdapter] = None,
    adapt: bool = False,
) -> StickLoopResult:
    """
    Grow sticks 0, 1, ... drawing (A, B), then v, then h, then the weights,
    then u_n for the points assigned to the stick just finished. Stops at the
    first i* where every u_n exceeds the mass left after i* sticks. Sticks
    beyond i* from the previous sweep are dropped.
    """
    X = np.asarray(X, dtype=float)
    assignments = np.asarray(assignments, dtype=int)
    N, dim = X.shape
    r = state.kernel_width

    u = np.zeros(N)
    remainder = np.ones(N)
    weight_columns = []
    sticks: List[Stick] = []
    indicators: List[StickIndicators] = []

    j = 0
    while True:
        if j >= MAX_TRUNCATION:
            raise RunawayTruncationError(f"Truncation level exceeded {MAX_TRUNCATION}")

        members = np.flatnonzero(assignments >= j)
        if members.size == 0:
            stick = _prior_stick(state.alpha, state.beta_param, dim, rng)
            indicators.append(StickIndicators(members, np.zeros(0, dtype=int), np.zeros(0, dtype=int)))
        else:
            if j < len(state.sticks):
                previous = state.sticks[j]
            else:
                previous = _prior_stick(state.alpha, state.beta_param, dim, rng)
            kappa = kernel(X[members], previous.h, r)
            A, B = sample_aux_AB_column(assignments[members], j, previous.v, kappa, rng)
            indicators.append(StickIndicators(members, A, B))
            a, b = state.alpha + A.sum(), state.beta_param + A.size - A.sum()
            v = float(np.clip(rng.beta(a, b), V_CLIP, 1.0 - V_CLIP))
            X_members = X[members]
            result = hmc_sample_unit_cube(
                lambda h: h_log_posterior_grad(h, B, X_members, r),
                previous.h,
                hmc_config,
                rng,
                adapter,
                adapt,
            )
            stick = Stick(v=v, h=np.asarray(result.value, dtype=float))
        sticks.append(stick)

        breaks = stick.v * kernel(X, stick.h, r) if N else np.zeros(0)
        column = breaks * remainder
        remainder = remainder * (1.0 - breaks)
        weight_columns.append(column)

        at_stick = assignments == j
        if at_stick.any():
            u[at_stick] = sample_u(column[at_stick], rng)

        j += 1
        if np.all(u > remainder):
            break

    new_state = GatingState(
        kernel_width=r,
        alpha=state.alpha,
        beta_param=state.beta_param,
        sticks=sticks,
        truncation_level=j,
    )
    weights = np.column_stack(weight_columns) if N else np.zeros((0, j))
    return StickLoopResult(new_state, SliceAuxiliaries(u=u, indicators=indicators), weights, remainder)
