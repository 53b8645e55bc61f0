import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd

from ..config.run_config import RunConfig
from ..config.settings import RUN_STORE_NAME
from ..core.datasets import sample_design
from ..core.errors import ChainFailure
from ..core.gibbs import run_chain
from ..core.metrics_predict import evaluate_trace
from ..core.models import HmcConfig, ModelTag, PriorTable
from ..core.rg_baseline import run_rg_chain
from ..database.models import BenchLog, BenchStatus, RunResult, RunStatus
from ..database.sqlite_manager import RunStore
from ..utils.logging_utils import get_logger
from ..utils.random_utils import derive_rng

logger = get_logger(__name__)

RunKey = Tuple[int, str, int]

AGGREGATE_COLUMNS = ["dataset_id", "model", "rmse", "nlpd", "crps", "i_star_mean", "completed", "failed"]


@dataclass(frozen=True)
class RunSpec:
    dataset_id: int
    model: str
    seed: int
    total_iterations: int
    burn_in: int
    thin: int
    priors: PriorTable
    hmc: HmcConfig
    per_record_rmse: bool = False


def run_single(spec: RunSpec) -> RunResult:
    """One (dataset, model, seed) replication. Failures come back as rows."""
    result = RunResult(spec.dataset_id, spec.model, spec.seed)
    started = time.time()
    try:
        dataset = sample_design(spec.dataset_id, seed=spec.seed)
        chain = run_rg_chain if spec.model == ModelTag.RG else run_chain
        trace = chain(dataset, spec.priors, spec.hmc, spec.total_iterations, spec.seed, spec.burn_in, spec.thin)
        scores = evaluate_trace(
            trace,
            dataset.X_norm,
            dataset.y_std,
            dataset.X_test_norm,
            dataset.y_test_raw,
            dataset.transform,
            spec.priors,
            derive_rng(spec.seed, "predict"),
            per_record_rmse=spec.per_record_rmse,
        )
        result.rmse = scores.rmse
        result.nlpd = scores.nlpd
        result.crps = scores.crps
        result.i_star_mean = scores.mean_i_star
        result.records = scores.records
        logger.info(
            f"Run {result.key}: RMSE={scores.rmse:.4f} NLPD={scores.nlpd:.4f} CRPS={scores.crps:.4f}"
        )
    except Exception as e:
        result.status = RunStatus.FAILED
        result.error_message = str(e)
        if isinstance(e, ChainFailure):
            result.failed_iteration = e.iteration
        logger.error(f"Run {result.key} failed: {e}")
    result.runtime_seconds = time.time() - started
    return result


@dataclass
class BenchSummary:
    bench_log: BenchLog
    runs_path: Path
    aggregate_path: Path

    @property
    def partial_failure(self) -> bool:
        return self.bench_log.runs_failed > 0


class BenchService:
    def __init__(self, config: RunConfig, store: Optional[RunStore] = None):
        self.config = config
        self.out = Path(config.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.store = store or RunStore(str(self.out / RUN_STORE_NAME))

    def planned_runs(self) -> List[RunSpec]:
        config = self.config
        return [
            RunSpec(dataset_id, model, seed, config.total_iterations, config.burn_in, config.thin,
                    config.priors, config.hmc, config.per_record_rmse)
            for dataset_id in config.dataset_ids
            for model in config.models
            for seed in config.seeds
        ]

    def _collect(self, result: RunResult, bench_log: BenchLog):
        saved = self.store.save_run_result(result)
        bench_log.runs_processed += 1
        if saved is None:
            logger.error(f"Run {result.key} is missing from the run store; counting it as failed")
            bench_log.runs_failed += 1
        elif result.status == RunStatus.COMPLETED:
            bench_log.runs_succeeded += 1
        else:
            bench_log.runs_failed += 1

    def run(self) -> BenchSummary:
        if self.store.connection is None:
            self.store.connect()
        bench_log = BenchLog(started_at=datetime.now())
        try:
            runs = self.planned_runs()
            if self.config.resume:
                previous = self.store.get_last_bench_log()
                if previous is not None:
                    logger.info(
                        f"Previous bench {previous.status}: {previous.runs_succeeded} succeeded, "
                        f"{previous.runs_failed} failed"
                    )
                done = self.store.get_completed_keys()
                skipped = [spec for spec in runs if (spec.dataset_id, spec.model, spec.seed) in done]
                runs = [spec for spec in runs if (spec.dataset_id, spec.model, spec.seed) not in done]
                logger.info(f"Resuming: {len(skipped)} runs already completed, {len(runs)} to go")
            else:
                self.store.clear_run_results()

            if self.config.workers == 1:
                for spec in runs:
                    self._collect(run_single(spec), bench_log)
            else:
                with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
                    futures = {pool.submit(run_single, spec): spec for spec in runs}
                    for future in as_completed(futures):
                        spec = futures[future]
                        try:
                            result = future.result()
                        except Exception as e:
                            logger.error(f"Worker for run {(spec.dataset_id, spec.model, spec.seed)} crashed: {e}")
                            result = RunResult(spec.dataset_id, spec.model, spec.seed,
                                               status=RunStatus.FAILED, error_message=str(e))
                        self._collect(result, bench_log)

            bench_log.status = BenchStatus.COMPLETED
        except Exception as e:
            logger.error(f"Benchmark failed: {e}")
            bench_log.status = BenchStatus.FAILED
            bench_log.error_message = str(e)
            raise
        finally:
            bench_log.finished_at = datetime.now()
            self.store.save_bench_log(bench_log)

        runs_path, aggregate_path = self.export()
        logger.info(
            f"Benchmark finished: {bench_log.runs_succeeded} succeeded, {bench_log.runs_failed} failed"
        )
        return BenchSummary(bench_log, runs_path, aggregate_path)

    def export(self) -> Tuple[Path, Path]:
        results = self.store.get_run_results()
        columns = list(RunResult.__dataclass_fields__)
        runs = pd.DataFrame([result.__dict__ for result in results], columns=columns)
        runs_path = self.out / "runs.csv"
        runs.drop(columns=["run_id", "created_at"]).to_csv(runs_path, index=False)

        aggregate_path = self.out / "aggregate.csv"
        aggregate(runs, self.config.dataset_ids, self.config.models).to_csv(aggregate_path, index=False)
        logger.info(f"Wrote {runs_path} and {aggregate_path}")
        return runs_path, aggregate_path


def aggregate(runs: pd.DataFrame, dataset_ids: List[int], models: List[str]) -> pd.DataFrame:
    """Seed averages per (dataset, model); failed runs are counted, not averaged."""
    rows = []
    for dataset_id in dataset_ids:
        for model in models:
            selected = runs[(runs["dataset_id"] == dataset_id) & (runs["model"] == model)]
            completed = selected[selected["status"] == RunStatus.COMPLETED]
            failed = len(selected) - len(completed)
            if failed:
                logger.warning(f"Aggregate ({dataset_id}, {model}): skipping {failed} failed runs")
            means = completed[["rmse", "nlpd", "crps", "i_star_mean"]].astype(float).mean()
            rows.append({
                "dataset_id": dataset_id,
                "model": model,
                "rmse": means["rmse"],
                "nlpd": means["nlpd"],
                "crps": means["crps"],
                "i_star_mean": means["i_star_mean"],
                "completed": len(completed),
                "failed": failed,
            })
    return pd.DataFrame(rows, columns=AGGREGATE_COLUMNS)
