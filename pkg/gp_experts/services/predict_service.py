from pathlib import Path

import numpy as np
import pandas as pd

from ..core.errors import TraceFormatError
from ..core.metrics_predict import RecordPredictor, crps
from ..utils.logging_utils import get_logger
from ..utils.random_utils import derive_rng
from .trace_service import LoadedTrace, read_trace

logger = get_logger(__name__)


def read_test_frame(path, dim: int) -> pd.DataFrame:
    """Test inputs x1..xD in raw units, with an optional y column."""
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise TraceFormatError("test file has no header", 1)
    columns = [f"x{d + 1}" for d in range(dim)]
    missing = [name for name in columns if name not in frame.columns]
    if missing:
        raise TraceFormatError(f"missing columns {missing}", 1)
    wanted = columns + (["y"] if "y" in frame.columns else [])
    numeric = frame[wanted].apply(pd.to_numeric, errors="coerce")
    bad_rows = np.flatnonzero(numeric.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        raise TraceFormatError("non-numeric value", int(bad_rows[0]) + 2)
    return numeric


def predict_frame(loaded: LoadedTrace, frame: pd.DataFrame, seed: int = 0) -> pd.DataFrame:
    """
    Posterior predictive summaries per test point, in raw units, averaged
    over the retained records.
    """
    dim = loaded.X.shape[1]
    columns = [f"x{d + 1}" for d in range(dim)]
    has_truth = "y" in frame.columns
    output = frame[columns].copy()
    result_columns = ["mean", "variance"] + (["density", "crps"] if has_truth else [])
    if frame.empty or not loaded.trace.records:
        for name in result_columns:
            output[name] = pd.Series(dtype=float)
        return output

    X_star = loaded.transform.normalize_x(frame[columns].to_numpy())
    truth = frame["y"].to_numpy() if has_truth else None
    rng = derive_rng(seed, "predict")
    means, second_moments, densities, scores = [], [], [], []
    for record in loaded.trace.records:
        mixture = RecordPredictor(record, loaded.X, loaded.y, loaded.priors, rng).predict(X_star)
        mixture = mixture.rescaled(loaded.transform.y_sd, loaded.transform.y_mean)
        mean = mixture.mean()
        means.append(mean)
        second_moments.append(mixture.variance() + mean ** 2)
        if has_truth:
            densities.append(mixture.pdf(truth))
            scores.append(crps(mixture, truth))

    grand_mean = np.mean(means, axis=0)
    output["mean"] = grand_mean
    output["variance"] = np.mean(second_moments, axis=0) - grand_mean ** 2
    if has_truth:
        output["density"] = np.mean(densities, axis=0)
        output["crps"] = np.mean(scores, axis=0)
    return output


def predict_to_csv(trace_path, test_csv, out_path, seed: int = 0) -> Path:
    loaded = read_trace(trace_path)
    frame = read_test_frame(test_csv, loaded.X.shape[1])
    predictions = predict_frame(loaded, frame, seed)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    predictions.to_csv(out_path, index=False)
    logger.info(f"Wrote {len(predictions)} predictions to {out_path}")
    return out_path
