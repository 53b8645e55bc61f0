"""
Synthetic regression problems: the two-cluster demonstration surface, five
benchmark functions from the computer-experiment literature, the uniform
sampling plans and the normalize/standardize transforms fitted on training
rows.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..config.settings import DEMO_BOX, DEMO_FIXED_NOISE_VAR, N_TEST, N_TRAIN
from ..utils.logging_utils import get_logger
from ..utils.random_utils import derive_rng
from .errors import DomainError, InvalidParameterError

logger = get_logger(__name__)

DOMAIN_TOLERANCE = 1e-12
GRAMACY_LEE_NOISE_SD = 0.05


def gl2008_demo(x1, x2):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return x1 * np.exp(-(x1 ** 2 + x2 ** 2))


def borehole(x: np.ndarray) -> np.ndarray:
    """Water flow through a borehole, inputs in physical units."""
    rw, r, Tu, Hu, Tl, Hl, L, Kw = x.T
    log_ratio = np.log(r / rw)
    numerator = 2.0 * np.pi * Tu * (Hu - Hl)
    denominator = log_ratio * (1.0 + 2.0 * L * Tu / (log_ratio * rw ** 2 * Kw) + Tu / Tl)
    return numerator / denominator


def dette_pepelyshev_exp(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 100.0 * (
            np.exp(-2.0 / x[:, 0] ** 1.75)
            + np.exp(-2.0 / x[:, 1] ** 1.5)
            + np.exp(-2.0 / x[:, 2] ** 1.25)
        )


def dette_pepelyshev_8d(x: np.ndarray) -> np.ndarray:
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    value = (
        4.0 * (x1 - 2.0 + 8.0 * x2 - 8.0 * x2 ** 2) ** 2
        + (3.0 - 4.0 * x2) ** 2
        + 16.0 * np.sqrt(x3 + 1.0) * (2.0 * x3 - 1.0) ** 2
    )
    partial = np.cumsum(x[:, 2:], axis=1)
    for i in range(4, 9):
        value = value + i * np.log1p(partial[:, i - 3])
    return value


def franke(x: np.ndarray) -> np.ndarray:
    a = 9.0 * x[:, 0]
    b = 9.0 * x[:, 1]
    return (
        0.75 * np.exp(-((a - 2.0) ** 2) / 4.0 - ((b - 2.0) ** 2) / 4.0)
        + 0.75 * np.exp(-((a + 1.0) ** 2) / 49.0 - (b + 1.0) / 10.0)
        + 0.5 * np.exp(-((a - 7.0) ** 2) / 4.0 - ((b - 3.0) ** 2) / 4.0)
        - 0.2 * np.exp(-((a - 4.0) ** 2) - (b - 7.0) ** 2)
    )


def gramacy_lee(x: np.ndarray) -> np.ndarray:
    """Noise-free part; x5 and x6 are inactive."""
    return np.exp(np.sin((0.9 * (x[:, 0] + 0.48)) ** 10)) + x[:, 1] * x[:, 2] + x[:, 3]


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    input_dim: int
    input_box: Tuple[Tuple[float, ...], Tuple[float, ...]]
    objective: Callable[[np.ndarray], np.ndarray]
    noise_sd: float = 0.0
    # normalize against input_box instead of the training min/max
    physical_units: bool = False

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.input_box[0], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.input_box[1], dtype=float)


def _unit_box(dim: int):
    return (tuple([0.0] * dim), tuple([1.0] * dim))


BENCHMARKS: Dict[int, BenchmarkProblem] = {
    1: BenchmarkProblem(
        "borehole",
        8,
        (
            (0.05, 100.0, 63070.0, 990.0, 63.1, 700.0, 1120.0, 9855.0),
            (0.15, 50000.0, 115600.0, 1110.0, 116.0, 820.0, 1680.0, 12045.0),
        ),
        borehole,
        physical_units=True,
    ),
    2: BenchmarkProblem("dette_pepelyshev_exp", 3, _unit_box(3), dette_pepelyshev_exp),
    3: BenchmarkProblem("dette_pepelyshev_8d", 8, _unit_box(8), dette_pepelyshev_8d),
    4: BenchmarkProblem("franke", 2, _unit_box(2), franke),
    5: BenchmarkProblem("gramacy_lee", 6, _unit_box(6), gramacy_lee, noise_sd=GRAMACY_LEE_NOISE_SD),
}


def get_problem(dataset_id: int) -> BenchmarkProblem:
    if dataset_id not in BENCHMARKS:
        raise InvalidParameterError(f"Unknown dataset id {dataset_id}; expected one of {sorted(BENCHMARKS)}")
    return BENCHMARKS[dataset_id]


def benchmark_function(dataset_id: int, x, rng: Optional[np.random.Generator] = None):
    """
    Evaluate benchmark dataset_id at one point or at the rows of x. Noise is
    added for the noisy problem only when rng is given.
    """
    problem = get_problem(dataset_id)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != problem.input_dim:
        raise DomainError(f"{problem.name} takes {problem.input_dim} inputs, got {x.shape[1]}")
    outside = (x < problem.lower - DOMAIN_TOLERANCE) | (x > problem.upper + DOMAIN_TOLERANCE)
    if outside.any():
        raise DomainError(f"Input outside the {problem.name} domain: {x[outside.any(axis=1)][0]}")

    value = problem.objective(x)
    if problem.noise_sd and rng is not None:
        value = value + rng.normal(0.0, problem.noise_sd, size=value.shape)
    return float(value[0]) if single else value


@dataclass
class Transform:
    """Per-dimension min/max of X and mean/sd of y."""

    x_min: np.ndarray
    x_max: np.ndarray
    y_mean: float
    y_sd: float

    def __post_init__(self):
        self.x_min = np.asarray(self.x_min, dtype=float)
        self.x_max = np.asarray(self.x_max, dtype=float)
        if np.any(self.x_max <= self.x_min):
            raise InvalidParameterError("Each input dimension needs a positive range")
        if not self.y_sd > 0:
            raise InvalidParameterError("Response standard deviation must be positive")

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, box: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> "Transform":
        if box is None:
            box = (X.min(axis=0), X.max(axis=0))
        return cls(box[0], box[1], float(np.mean(y)), float(np.std(y)))

    def normalize_x(self, X):
        return (np.asarray(X, dtype=float) - self.x_min) / (self.x_max - self.x_min)

    def denormalize_x(self, X):
        return np.asarray(X, dtype=float) * (self.x_max - self.x_min) + self.x_min

    def standardize_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_sd

    def destandardize_y(self, y):
        return np.asarray(y, dtype=float) * self.y_sd + self.y_mean

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min.tolist(),
            "x_max": self.x_max.tolist(),
            "y_mean": self.y_mean,
            "y_sd": self.y_sd,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Transform":
        return cls(data["x_min"], data["x_max"], data["y_mean"], data["y_sd"])


@dataclass
class Dataset:
    name: str
    X_raw: np.ndarray
    y_raw: np.ndarray
    transform: Transform
    X_test_raw: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    y_test_raw: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fixed_noise_var: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.X_raw.shape[1]

    @property
    def X_norm(self) -> np.ndarray:
        return self.transform.normalize_x(self.X_raw)

    @property
    def y_std(self) -> np.ndarray:
        return self.transform.standardize_y(self.y_raw)

    @property
    def X_test_norm(self) -> np.ndarray:
        return self.transform.normalize_x(self.X_test_raw)

    @property
    def y_test_std(self) -> np.ndarray:
        return self.transform.standardize_y(self.y_test_raw)

    def to_frame(self) -> pd.DataFrame:
        columns = [f"x{d + 1}" for d in range(self.dim)]
        frames = []
        for split, X, y in (("train", self.X_raw, self.y_raw), ("test", self.X_test_raw, self.y_test_raw)):
            if len(y) == 0:
                continue
            frame = pd.DataFrame(X, columns=columns)
            frame["y"] = y
            frame["split"] = split
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Wrote dataset {self.name} to {path}")


def _uniform(problem: BenchmarkProblem, size: int, rng: np.random.Generator) -> np.ndarray:
    return problem.lower + (problem.upper - problem.lower) * rng.uniform(size=(size, problem.input_dim))


def sample_design(dataset_id: int, n_train: int = N_TRAIN, n_test: int = N_TEST, seed: int = 0) -> Dataset:
    """
    Uniform i.i.d. train/test designs over the problem domain. The transform
    is fitted on the training rows and applied to both splits; problems in
    physical units map their input box to [0,1] instead.
    """
    problem = get_problem(dataset_id)
    design_rng = derive_rng(seed, "design")
    noise_rng = derive_rng(seed, "noise")
    X_train = _uniform(problem, n_train, design_rng)
    X_test = _uniform(problem, n_test, design_rng)
    y_train = benchmark_function(dataset_id, X_train, noise_rng)
    y_test = benchmark_function(dataset_id, X_test, noise_rng)
    return Dataset(
        name=problem.name,
        X_raw=X_train,
        y_raw=y_train,
        transform=Transform.fit(X_train, y_train, box=(problem.lower, problem.upper) if problem.physical_units else None),
        X_test_raw=X_test,
        y_test_raw=y_test,
    )


DEMO_RECTANGLES: List[Tuple[Tuple[float, float], Tuple[float, float]]] = [
    ((-1.0, 0.0), (-1.0, 1.0)),
    ((0.0, 1.0), (-1.0, 1.0)),
    ((4.0, 5.0), (4.0, 5.0)),
]


def demo_design(seed: int = 0, per_rectangle: int = 10) -> Dataset:
    """
    Thirty noiseless points: a steep region split over two rectangles and a
    flat cluster far away. Inputs are normalized against the nominal
    [-2, 6]^2 box and the noise variance is fixed.
    """
    rng = derive_rng(seed, "design")
    blocks = []
    for (x_lo, x_hi), (y_lo, y_hi) in DEMO_RECTANGLES:
        lower = np.array([x_lo, y_lo])
        upper = np.array([x_hi, y_hi])
        blocks.append(lower + (upper - lower) * rng.uniform(size=(per_rectangle, 2)))
    X = np.vstack(blocks)
    y = gl2008_demo(X[:, 0], X[:, 1])
    low, high = DEMO_BOX
    transform = Transform.fit(X, y, box=(np.full(2, low), np.full(2, high)))
    return Dataset(name="demo", X_raw=X, y_raw=y, transform=transform, fixed_noise_var=DEMO_FIXED_NOISE_VAR)
