from dataclasses import dataclass
from datetime import datetime
from typing import Optional


class RunStatus:
    COMPLETED = 'completed'
    FAILED = 'failed'


class BenchStatus:
    IN_PROGRESS = 'in_progress'
    COMPLETED = 'completed'
    FAILED = 'failed'


@dataclass
class RunResult:
    dataset_id: int
    model: str
    seed: int
    status: str = RunStatus.COMPLETED
    rmse: Optional[float] = None
    nlpd: Optional[float] = None
    crps: Optional[float] = None
    i_star_mean: Optional[float] = None
    records: int = 0
    runtime_seconds: Optional[float] = None
    error_message: Optional[str] = None
    failed_iteration: Optional[int] = None
    run_id: Optional[int] = None
    created_at: Optional[datetime] = None

    @property
    def key(self) -> tuple:
        return (self.dataset_id, self.model, self.seed)


@dataclass
class BenchLog:
    started_at: datetime
    log_id: Optional[int] = None
    finished_at: Optional[datetime] = None
    runs_processed: int = 0
    runs_succeeded: int = 0
    runs_failed: int = 0
    status: str = BenchStatus.IN_PROGRESS
    error_message: Optional[str] = None
    created_at: Optional[datetime] = None
