import json

import numpy as np
import pytest

from gp_experts.core.datasets import sample_design
from gp_experts.core.errors import TraceFormatError
from gp_experts.core.models import ChainTrace, ExpertHyper, ModelTag, PriorTable, TraceRecord
from gp_experts.services.trace_service import read_trace, write_trace


def make_trace():
    hypers = [ExpertHyper(1.2, [0.3, 0.4], 0.01), ExpertHyper(0.7, [0.9, 0.2], 0.05)]
    records = [
        TraceRecord(19, ModelTag.GPKSBP, 0.8, 2.0, 1.0, 2, [0.6, 0.3], [[0.1, 0.2], [0.7, 0.9]], hypers,
                    np.array([0, 1, 0, 1, 1])),
        TraceRecord(39, ModelTag.GPKSBP, 0.9, 1.0, 3.0, 2, [0.5, 0.4], [[0.2, 0.2], [0.6, 0.8]], hypers,
                    np.array([0, 0, 0, 1, 1])),
    ]
    return ChainTrace(ModelTag.GPKSBP, 40, 0, 20, records=records, acceptance={"r": 0.8})


@pytest.fixture
def dataset():
    return sample_design(4, n_train=5, n_test=2, seed=0)


def test_written_trace_reads_back(tmp_path, dataset):
    priors = PriorTable(fixed_noise_var=1e-4)
    path = write_trace(tmp_path / "trace.jsonl", make_trace(), dataset, priors)
    loaded = read_trace(path)
    assert loaded.dataset_name == "franke"
    assert loaded.trace.stride == 20
    assert loaded.trace.acceptance == {"r": 0.8}
    assert loaded.priors.fixed_noise_var == 1e-4
    np.testing.assert_allclose(loaded.X, dataset.X_norm)
    np.testing.assert_allclose(loaded.y, dataset.y_std)
    assert [record.to_dict() for record in loaded.trace.records] == [record.to_dict() for record in make_trace().records]


def test_header_is_versioned(tmp_path, dataset):
    path = write_trace(tmp_path / "trace.jsonl", make_trace(), dataset, PriorTable())
    header = json.loads(path.read_text().splitlines()[0])
    assert header["format"] == "gp-experts-trace"
    assert header["version"] == 1


def test_errors_carry_line_numbers(tmp_path, dataset):
    path = write_trace(tmp_path / "trace.jsonl", make_trace(), dataset, PriorTable())
    lines = path.read_text().splitlines()

    broken = tmp_path / "broken.jsonl"
    broken.write_text("\n".join(lines[:2] + ["{not json"] + lines[3:]) + "\n")
    with pytest.raises(TraceFormatError) as info:
        read_trace(broken)
    assert info.value.line_number == 3

    missing = tmp_path / "missing.jsonl"
    record = json.loads(lines[1])
    del record["hypers"]
    missing.write_text("\n".join([lines[0], json.dumps(record)]) + "\n")
    with pytest.raises(TraceFormatError) as info:
        read_trace(missing)
    assert info.value.line_number == 2


def test_foreign_files_are_rejected(tmp_path):
    path = tmp_path / "other.jsonl"
    path.write_text(json.dumps({"format": "something-else", "version": 1}) + "\n")
    with pytest.raises(TraceFormatError):
        read_trace(path)
    path.write_text(json.dumps({"format": "gp-experts-trace", "version": 99}) + "\n")
    with pytest.raises(TraceFormatError):
        read_trace(path)
    path.write_text("")
    with pytest.raises(TraceFormatError) as info:
        read_trace(path)
    assert info.value.line_number == 1
