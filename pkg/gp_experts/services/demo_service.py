import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np
import pandas as pd

from ..config.run_config import RunConfig
from ..config.settings import DEMO_BOX, DIAGONAL_LOCATIONS, PREDICTIVE_SAMPLES
from ..core.datasets import Dataset, demo_design
from ..core.gibbs import run_chain
from ..core.metrics_predict import PredictiveMixture, RecordPredictor
from ..core.models import ChainTrace
from ..utils.logging_utils import get_logger
from ..utils.random_utils import derive_rng
from .trace_service import write_trace

logger = get_logger(__name__)


@dataclass
class DemoOutputs:
    summary: Path
    predictive_samples: Path
    trace: Path


def summarize_trace(trace: ChainTrace, dataset: Dataset) -> pd.DataFrame:
    """
    Posterior means in long form: global parameters first, then one block
    per expert ordered by mean share. Expert identity is the stick position.
    """
    records = trace.records
    rows = [
        {"expert": "", "parameter": "r", "value": np.mean([rec.r for rec in records])},
        {"expert": "", "parameter": "alpha", "value": np.mean([rec.alpha for rec in records])},
        {"expert": "", "parameter": "beta", "value": np.mean([rec.beta for rec in records])},
        {"expert": "", "parameter": "i_star", "value": np.mean([rec.i_star for rec in records])},
    ]
    width = max(rec.i_star for rec in records)
    shares = np.zeros(width)
    for rec in records:
        shares[:rec.i_star] += rec.shares()[:rec.i_star]
    shares /= len(records)

    low, high = DEMO_BOX
    fixed_noise = dataset.fixed_noise_var
    for rank, i in enumerate(np.argsort(-shares, kind="stable")):
        if shares[i] <= 0:
            break
        present = [rec for rec in records if i < rec.i_star]
        h = np.mean([rec.h[i] for rec in present], axis=0)
        lengths = np.mean([rec.hypers[i].length_scales for rec in present], axis=0)
        block = {
            "share": shares[i],
            "v": np.mean([rec.v[i] for rec in present]),
            "sigma2": np.mean([rec.hypers[i].output_scale for rec in present]),
            "noise_var": fixed_noise if fixed_noise is not None else np.mean([rec.hypers[i].noise_var for rec in present]),
            "noise_learned": 0.0 if fixed_noise is not None else 1.0,
        }
        for d in range(len(h)):
            block[f"h{d + 1}"] = h[d]
            block[f"h{d + 1}_box"] = h[d] * (high - low) + low
            block[f"l{d + 1}"] = lengths[d]
        rows.extend({"expert": str(rank + 1), "parameter": name, "value": value} for name, value in block.items())
    return pd.DataFrame(rows)


def diagonal_locations(count: int = DIAGONAL_LOCATIONS) -> np.ndarray:
    low, high = DEMO_BOX
    line = np.linspace(low, high, count)
    return np.column_stack([line, line])


def predictive_samples(trace: ChainTrace, dataset: Dataset, priors, seed: int, samples: int = PREDICTIVE_SAMPLES) -> pd.DataFrame:
    """
    One draw per diagonal location from each of `samples` evenly spaced
    retained records, in raw response units.
    """
    rng = derive_rng(seed, "predict")
    locations = diagonal_locations()
    X_star = dataset.transform.normalize_x(locations)
    predictors: Dict[int, RecordPredictor] = {}
    rows = []
    S = len(trace.records)
    for k in range(samples):
        index = k * S // samples
        if index not in predictors:
            predictors[index] = RecordPredictor(trace.records[index], dataset.X_norm, dataset.y_std, priors, rng)
        mixture = predictors[index].predict(X_star).rescaled(dataset.transform.y_sd, dataset.transform.y_mean)
        for t, (x1, x2) in enumerate(locations):
            point = PredictiveMixture(mixture.weights[t], mixture.means[t], mixture.variances[t])
            rows.append({
                "location": t,
                "x1": x1,
                "x2": x2,
                "sample": k,
                "iteration": trace.records[index].iteration,
                "y": float(point.sample(1, rng)[0]),
            })
    return pd.DataFrame(rows).sort_values(["location", "sample"], kind="stable").reset_index(drop=True)


def run_demo(config: RunConfig, seed: int) -> DemoOutputs:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = demo_design(seed)
    priors = dataclasses.replace(config.priors, fixed_noise_var=dataset.fixed_noise_var)
    logger.info(f"Demo: seed {seed}, noise variance fixed at {dataset.fixed_noise_var}")

    trace = run_chain(dataset, priors, config.hmc, config.total_iterations, seed, config.burn_in, config.thin)

    trace_path = write_trace(out / "demo_trace.jsonl", trace, dataset, priors)
    summary_path = out / "demo_summary.csv"
    summarize_trace(trace, dataset).to_csv(summary_path, index=False)
    samples_path = out / "demo_predictive_samples.csv"
    predictive_samples(trace, dataset, priors, seed).to_csv(samples_path, index=False)
    dataset.to_csv(out / "demo_dataset.csv")
    logger.info(f"Demo outputs written to {out}")
    return DemoOutputs(summary_path, samples_path, trace_path)
