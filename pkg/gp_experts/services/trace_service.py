"""
Line-delimited JSON trace files. Line 1 is a versioned header carrying the
standardized training data, the transform and the priors; every following
line is one retained record.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..core.datasets import Dataset, Transform
from ..core.errors import TraceFormatError
from ..core.models import ChainTrace, PriorTable, TraceRecord
from ..utils.logging_utils import get_logger

logger = get_logger(__name__)

TRACE_FORMAT = "gp-experts-trace"
TRACE_VERSION = 1


@dataclass
class LoadedTrace:
    trace: ChainTrace
    dataset_name: str
    X: np.ndarray
    y: np.ndarray
    transform: Transform
    priors: PriorTable


def _header(trace: ChainTrace, dataset: Dataset, priors: PriorTable) -> dict:
    return {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "model": trace.model,
        "dataset": dataset.name,
        "total_iterations": trace.total_iterations,
        "burn_in": trace.burn_in,
        "stride": trace.stride,
        "acceptance": trace.acceptance,
        "transform": dataset.transform.to_dict(),
        "priors": priors.to_dict(),
        "fixed_noise_var": priors.fixed_noise_var,
        "X": dataset.X_norm.tolist(),
        "y": dataset.y_std.tolist(),
    }


def write_trace(path, trace: ChainTrace, dataset: Dataset, priors: PriorTable) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        handle.write(json.dumps(_header(trace, dataset, priors)) + "\n")
        for record in trace.records:
            handle.write(json.dumps(record.to_dict()) + "\n")
    logger.info(f"Wrote {len(trace)} {trace.model} records to {path}")
    return path


def _parse_line(text: str, line_number: int) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"invalid JSON ({e.msg})", line_number)
    if not isinstance(data, dict):
        raise TraceFormatError("expected a JSON object", line_number)
    return data


def read_trace(path) -> LoadedTrace:
    path = Path(path)
    header: Optional[dict] = None
    records = []
    with open(path) as handle:
        for line_number, text in enumerate(handle, start=1):
            if not text.strip():
                continue
            data = _parse_line(text, line_number)
            if header is None:
                if data.get("format") != TRACE_FORMAT:
                    raise TraceFormatError(f"not a {TRACE_FORMAT} file", line_number)
                if data.get("version") != TRACE_VERSION:
                    raise TraceFormatError(f"unsupported version {data.get('version')}", line_number)
                header = data
                continue
            try:
                records.append(TraceRecord.from_dict(data))
            except (KeyError, TypeError, ValueError) as e:
                raise TraceFormatError(f"malformed record ({e})", line_number)

    if header is None:
        raise TraceFormatError("missing header", 1)
    try:
        trace = ChainTrace(
            model=header["model"],
            total_iterations=int(header["total_iterations"]),
            burn_in=int(header["burn_in"]),
            stride=int(header["stride"]),
            records=records,
            acceptance=header.get("acceptance", {}),
        )
        loaded = LoadedTrace(
            trace=trace,
            dataset_name=header["dataset"],
            X=np.asarray(header["X"], dtype=float),
            y=np.asarray(header["y"], dtype=float),
            transform=Transform.from_dict(header["transform"]),
            priors=PriorTable.from_dict(header["priors"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise TraceFormatError(f"malformed header ({e})", 1)
    logger.info(f"Read {len(records)} {trace.model} records from {path}")
    return loaded
