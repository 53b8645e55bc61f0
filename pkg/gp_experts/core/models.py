from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..config import settings
from .errors import InvalidParameterError


class ModelTag:
    GPKSBP = 'gpksbp'
    RG = 'rg'

    ALL = (GPKSBP, RG)


@dataclass
class ExpertHyper:
    """sigma^2, per-dimension length scales and tau^2 of one SE expert."""

    output_scale: float
    length_scales: np.ndarray
    noise_var: float

    def __post_init__(self):
        self.output_scale = float(self.output_scale)
        self.noise_var = float(self.noise_var)
        self.length_scales = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        if self.length_scales.ndim != 1 or self.length_scales.size == 0:
            raise InvalidParameterError("length_scales must be a non-empty vector")
        if not (self.output_scale > 0 and self.noise_var > 0 and np.all(self.length_scales > 0)):
            raise InvalidParameterError(
                f"Expert hyperparameters must be strictly positive: "
                f"sigma2={self.output_scale}, l={self.length_scales}, tau2={self.noise_var}"
            )

    @property
    def dim(self) -> int:
        return self.length_scales.size

    def to_vector(self, include_noise: bool = True) -> np.ndarray:
        parts = [[self.output_scale], self.length_scales]
        if include_noise:
            parts.append([self.noise_var])
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, vector: np.ndarray, noise_var: Optional[float] = None) -> "ExpertHyper":
        vector = np.asarray(vector, dtype=float)
        if noise_var is None:
            return cls(vector[0], vector[1:-1], vector[-1])
        return cls(vector[0], vector[1:], noise_var)

    def to_dict(self) -> dict:
        return {
            "sigma2": self.output_scale,
            "length_scales": self.length_scales.tolist(),
            "noise_var": self.noise_var,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExpertHyper":
        return cls(data["sigma2"], data["length_scales"], data["noise_var"])


@dataclass
class ExpertPosteriorCache:
    assigned_indices: List[int]
    cov_inverse: np.ndarray
    log_det: float = 0.0
    rank1_ops: int = 0
    fallbacks: int = 0

    @classmethod
    def empty(cls) -> "ExpertPosteriorCache":
        return cls(assigned_indices=[], cov_inverse=np.zeros((0, 0)), log_det=0.0)

    def __len__(self) -> int:
        return len(self.assigned_indices)


@dataclass
class ExpertState:
    hyper: ExpertHyper
    cache: ExpertPosteriorCache = field(default_factory=ExpertPosteriorCache.empty)

    @property
    def size(self) -> int:
        return len(self.cache)


@dataclass
class Stick:
    v: float
    h: np.ndarray


@dataclass
class GatingState:
    kernel_width: float
    alpha: int
    beta_param: int
    sticks: List[Stick] = field(default_factory=list)
    truncation_level: int = 0

    @property
    def v(self) -> np.ndarray:
        return np.array([stick.v for stick in self.sticks], dtype=float)

    @property
    def h(self) -> np.ndarray:
        if not self.sticks:
            return np.zeros((0, 0))
        return np.vstack([stick.h for stick in self.sticks])


@dataclass
class StickIndicators:
    """A/B indicators of one stick, stored for the points with s_n >= i only."""

    indices: np.ndarray
    A: np.ndarray
    B: np.ndarray


@dataclass
class SliceAuxiliaries:
    u: np.ndarray
    indicators: List[StickIndicators] = field(default_factory=list)


@dataclass
class GeometricPriors:
    p_alpha: float = settings.P_ALPHA
    p_beta: float = settings.P_BETA

    def __post_init__(self):
        if not (0 < self.p_alpha < 1 and 0 < self.p_beta < 1):
            raise InvalidParameterError("Geometric success parameters must lie in (0, 1)")


@dataclass
class PriorTable:
    """Gamma priors are (shape, scale) pairs."""

    sigma2: Tuple[float, float] = settings.SIGMA2_PRIOR
    length_scale: Tuple[float, float] = settings.LENGTH_SCALE_PRIOR
    noise_var: Tuple[float, float] = settings.NOISE_VAR_PRIOR
    kernel_width: Tuple[float, float] = settings.KERNEL_WIDTH_PRIOR
    geometric: GeometricPriors = field(default_factory=GeometricPriors)
    rg_beta: Tuple[float, float] = settings.RG_BETA_PRIOR
    fixed_noise_var: Optional[float] = None

    def __post_init__(self):
        for name in ("sigma2", "length_scale", "noise_var", "kernel_width", "rg_beta"):
            shape, scale = getattr(self, name)
            if shape <= 0 or scale <= 0:
                raise InvalidParameterError(f"Prior {name} needs positive shape and scale")
            setattr(self, name, (float(shape), float(scale)))
        if self.fixed_noise_var is not None and self.fixed_noise_var <= 0:
            raise InvalidParameterError("fixed_noise_var must be positive")

    def mean_hyper(self, dim: int) -> ExpertHyper:
        noise = self.fixed_noise_var
        if noise is None:
            noise = self.noise_var[0] * self.noise_var[1]
        return ExpertHyper(
            self.sigma2[0] * self.sigma2[1],
            np.full(dim, self.length_scale[0] * self.length_scale[1]),
            noise,
        )

    def draw_hyper(self, dim: int, rng: np.random.Generator) -> ExpertHyper:
        sigma2 = rng.gamma(*self.sigma2)
        lengths = rng.gamma(self.length_scale[0], self.length_scale[1], size=dim)
        noise = self.fixed_noise_var
        if noise is None:
            noise = rng.gamma(*self.noise_var)
        return ExpertHyper(sigma2, lengths, noise)

    def to_dict(self) -> dict:
        return {
            "sigma2": list(self.sigma2),
            "length_scale": list(self.length_scale),
            "noise_var": list(self.noise_var),
            "kernel_width": list(self.kernel_width),
            "p_alpha": self.geometric.p_alpha,
            "p_beta": self.geometric.p_beta,
            "rg_beta": list(self.rg_beta),
            "fixed_noise_var": self.fixed_noise_var,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PriorTable":
        return cls(
            sigma2=tuple(data["sigma2"]),
            length_scale=tuple(data["length_scale"]),
            noise_var=tuple(data["noise_var"]),
            kernel_width=tuple(data["kernel_width"]),
            geometric=GeometricPriors(data["p_alpha"], data["p_beta"]),
            rg_beta=tuple(data["rg_beta"]),
            fixed_noise_var=data.get("fixed_noise_var"),
        )


@dataclass
class HmcConfig:
    leapfrog_steps: int = settings.HMC_LEAPFROG_STEPS
    step_cap: float = settings.HMC_STEP_CAP
    target_accept: float = settings.HMC_TARGET_ACCEPT
    dual_averaging_enabled: bool = True
    adaptation_iterations: int = settings.BURN_IN
    initial_step: float = settings.HMC_INITIAL_STEP

    def __post_init__(self):
        if self.leapfrog_steps < 1:
            raise InvalidParameterError("HMC needs at least one leapfrog step")
        if self.step_cap <= 0 or self.initial_step <= 0:
            raise InvalidParameterError("HMC step sizes must be positive")
        if not 0 < self.target_accept < 1:
            raise InvalidParameterError("target_accept must lie in (0, 1)")
        if self.adaptation_iterations < 0:
            raise InvalidParameterError("adaptation_iterations must be non-negative")


@dataclass
class ChainState:
    assignments: np.ndarray
    gating: Optional[GatingState]
    aux: Optional[SliceAuxiliaries]
    experts: List[ExpertState]
    iteration: int = 0


@dataclass
class TraceRecord:
    iteration: int
    model: str
    r: float
    alpha: Optional[float]
    beta: float
    i_star: int
    v: List[float]
    h: List[List[float]]
    hypers: List[ExpertHyper]
    assignments: np.ndarray

    def shares(self) -> np.ndarray:
        counts = np.bincount(self.assignments, minlength=len(self.hypers))
        return counts / max(len(self.assignments), 1)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "model": self.model,
            "r": self.r,
            "alpha": self.alpha,
            "beta": self.beta,
            "i_star": self.i_star,
            "v": list(self.v),
            "h": [list(map(float, row)) for row in self.h],
            "hypers": [hyper.to_dict() for hyper in self.hypers],
            "assignments": [int(s) for s in self.assignments],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TraceRecord":
        return cls(
            iteration=int(data["iteration"]),
            model=data["model"],
            r=float(data["r"]),
            alpha=None if data["alpha"] is None else float(data["alpha"]),
            beta=float(data["beta"]),
            i_star=int(data["i_star"]),
            v=[float(x) for x in data["v"]],
            h=[[float(x) for x in row] for row in data["h"]],
            hypers=[ExpertHyper.from_dict(item) for item in data["hypers"]],
            assignments=np.asarray(data["assignments"], dtype=int),
        )


@dataclass
class ChainTrace:
    model: str
    total_iterations: int
    burn_in: int
    stride: int
    records: List[TraceRecord] = field(default_factory=list)
    acceptance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)
