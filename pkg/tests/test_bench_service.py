import pandas as pd
import pytest

import gp_experts.services.bench_service as bench_service
from gp_experts.config.run_config import build_run_config
from gp_experts.core.errors import DomainError
from gp_experts.core.models import HmcConfig, PriorTable
from gp_experts.database.models import RunStatus
from gp_experts.services.bench_service import AGGREGATE_COLUMNS, BenchService, RunSpec, aggregate, run_single


def small_config(tmp_path, **flags):
    values = {"out": str(tmp_path), "dataset": "4", "seeds": "0", "total_iterations": 6, "burn_in": 2, "thin": 2}
    values.update(flags)
    return build_run_config(flags=values)


def test_run_single_scores_a_replication():
    spec = RunSpec(4, "rg", 0, 6, 2, 2, PriorTable(), HmcConfig())
    result = run_single(spec)
    assert result.status == RunStatus.COMPLETED
    assert result.records == 2
    assert result.rmse > 0 and result.crps > 0
    assert result.runtime_seconds >= 0


def test_bench_writes_runs_and_aggregate(tmp_path):
    service = BenchService(small_config(tmp_path))
    summary = service.run()
    service.store.close()
    assert not summary.partial_failure
    runs = pd.read_csv(summary.runs_path)
    assert sorted(runs["model"]) == ["gpksbp", "rg"]
    table = pd.read_csv(summary.aggregate_path)
    assert list(table.columns) == AGGREGATE_COLUMNS
    assert list(table["completed"]) == [1, 1]


def test_resume_skips_completed_runs(tmp_path, monkeypatch):
    first = BenchService(small_config(tmp_path, model="rg"))
    first.run()
    first.store.close()

    def unexpected(spec):
        raise AssertionError(f"{spec} should have been skipped")

    monkeypatch.setattr(bench_service, "run_single", unexpected)
    config = small_config(tmp_path, model="rg")
    config.resume = True
    second = BenchService(config)
    summary = second.run()
    second.store.close()
    assert summary.bench_log.runs_processed == 0
    assert len(pd.read_csv(summary.runs_path)) == 1


def test_failed_runs_are_recorded(tmp_path, monkeypatch):
    def broken(dataset_id, seed=0):
        raise DomainError("design outside the box")

    monkeypatch.setattr(bench_service, "sample_design", broken)
    service = BenchService(small_config(tmp_path))
    summary = service.run()
    service.store.close()
    assert summary.partial_failure
    runs = pd.read_csv(summary.runs_path)
    assert set(runs["status"]) == {RunStatus.FAILED}
    assert runs["error_message"].str.contains("outside").all()
    table = pd.read_csv(summary.aggregate_path)
    assert list(table["failed"]) == [1, 1]


def test_aggregate_averages_completed_runs_only():
    runs = pd.DataFrame([
        {"dataset_id": 2, "model": "rg", "status": "completed", "rmse": 1.0, "nlpd": 2.0, "crps": 0.5, "i_star_mean": 3.0},
        {"dataset_id": 2, "model": "rg", "status": "completed", "rmse": 3.0, "nlpd": 4.0, "crps": 1.5, "i_star_mean": 5.0},
        {"dataset_id": 2, "model": "rg", "status": "failed", "rmse": None, "nlpd": None, "crps": None, "i_star_mean": None},
    ])
    row = aggregate(runs, [2], ["rg"]).iloc[0]
    assert row["rmse"] == pytest.approx(2.0)
    assert row["crps"] == pytest.approx(1.0)
    assert (row["completed"], row["failed"]) == (2, 1)


def test_unstored_runs_count_as_failed(tmp_path, monkeypatch):
    service = BenchService(small_config(tmp_path, model="rg"))
    monkeypatch.setattr(service.store, "save_run_result", lambda result: None)
    summary = service.run()
    service.store.close()
    assert summary.partial_failure
    assert (summary.bench_log.runs_succeeded, summary.bench_log.runs_failed) == (0, 1)


def test_resume_reads_previous_bench_log(tmp_path):
    first = BenchService(small_config(tmp_path, model="rg"))
    first.run()
    first.store.close()

    config = small_config(tmp_path, model="rg")
    config.resume = True
    second = BenchService(config)
    second.store.connect()
    previous = second.store.get_last_bench_log()
    second.run()
    second.store.close()
    assert (previous.runs_succeeded, previous.runs_failed) == (1, 0)


@pytest.mark.slow
def test_fast_profile_favours_stick_breaking_gate(tmp_path):
    config = build_run_config(flags={"out": str(tmp_path)}, fast=True)
    service = BenchService(config)
    summary = service.run()
    service.store.close()
    assert not summary.partial_failure
    table = pd.read_csv(summary.aggregate_path).set_index(["dataset_id", "model"])
    for metric in ("crps", "nlpd"):
        wins = sum(table.loc[(d, "gpksbp"), metric] <= table.loc[(d, "rg"), metric] for d in range(1, 6))
        assert wins >= 3, metric
