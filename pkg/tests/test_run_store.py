from datetime import datetime

import pytest

from gp_experts.database.models import BenchLog, BenchStatus, RunResult, RunStatus
from gp_experts.database.sqlite_manager import RunStore


@pytest.fixture
def store(tmp_path):
    store = RunStore(str(tmp_path / "runs.db"))
    store.connect()
    yield store
    store.close()


def test_save_and_read_back(store):
    store.save_run_result(RunResult(4, "rg", 1, rmse=0.1, nlpd=-1.2, crps=0.05, i_star_mean=3.0, records=100))
    store.save_run_result(RunResult(2, "gpksbp", 0, status=RunStatus.FAILED, error_message="boom", failed_iteration=17))
    results = store.get_run_results()
    assert [result.key for result in results] == [(2, "gpksbp", 0), (4, "rg", 1)]
    assert results[0].failed_iteration == 17
    assert results[1].rmse == pytest.approx(0.1)
    assert store.get_completed_keys() == {(4, "rg", 1)}


def test_rerun_replaces_the_same_key(store):
    store.save_run_result(RunResult(1, "rg", 3, status=RunStatus.FAILED, error_message="first"))
    store.save_run_result(RunResult(1, "rg", 3, rmse=2.5))
    results = store.get_run_results()
    assert len(results) == 1
    assert results[0].status == RunStatus.COMPLETED
    assert results[0].error_message is None


def test_clear_run_results(store):
    for seed in range(3):
        store.save_run_result(RunResult(5, "gpksbp", seed))
    assert store.clear_run_results() == 3
    assert store.get_run_results() == []


def test_bench_logs(store):
    assert store.get_last_bench_log() is None
    log = BenchLog(started_at=datetime(2024, 1, 1), finished_at=datetime(2024, 1, 2), runs_processed=4,
                   runs_succeeded=3, runs_failed=1, status=BenchStatus.COMPLETED)
    first = store.save_bench_log(log)
    second = store.save_bench_log(log)
    assert second > first
    last = store.get_last_bench_log()
    assert last.log_id == second
    assert (last.runs_processed, last.runs_failed, last.status) == (4, 1, BenchStatus.COMPLETED)
