import sqlite3
from typing import List, Optional, Set

from .models import BenchLog, RunResult, RunStatus
from ..utils.logging_utils import get_logger

logger = get_logger(__name__)


class RunStore:
    def __init__(self, db_path: str):
        self.db_path = db_path
        self.connection = None

    def connect(self):
        try:
            self.connection = sqlite3.connect(self.db_path, check_same_thread=False)
            self.connection.row_factory = sqlite3.Row
            logger.info(f"Connected to run store {self.db_path}")
            self._create_tables()
        except Exception as e:
            logger.error(f"Error connecting to run store: {e}")
            raise

    def close(self):
        if self.connection is not None:
            self.connection.close()
            self.connection = None

    def _create_tables(self):
        """Ensure all required tables exist"""
        try:
            with self.connection:
                self.connection.executescript('''
                    CREATE TABLE IF NOT EXISTS run_results (
                        run_id INTEGER PRIMARY KEY AUTOINCREMENT,
                        dataset_id INTEGER NOT NULL,
                        model TEXT NOT NULL,
                        seed INTEGER NOT NULL,
                        status TEXT NOT NULL DEFAULT 'completed'
                            CHECK (status IN ('completed', 'failed')),
                        rmse REAL,
                        nlpd REAL,
                        crps REAL,
                        i_star_mean REAL,
                        records INTEGER DEFAULT 0,
                        runtime_seconds REAL,
                        error_message TEXT,
                        failed_iteration INTEGER,
                        created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                        UNIQUE (dataset_id, model, seed)
                    );

                    CREATE TABLE IF NOT EXISTS bench_logs (
                        log_id INTEGER PRIMARY KEY AUTOINCREMENT,
                        started_at TIMESTAMP NOT NULL,
                        finished_at TIMESTAMP,
                        runs_processed INTEGER DEFAULT 0,
                        runs_succeeded INTEGER DEFAULT 0,
                        runs_failed INTEGER DEFAULT 0,
                        status TEXT DEFAULT 'in_progress'
                            CHECK (status IN ('in_progress', 'completed', 'failed')),
                        error_message TEXT,
                        created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                    );

                    CREATE INDEX IF NOT EXISTS idx_run_results_status
                        ON run_results(status);
                ''')
                logger.info("Run store tables created/verified")
        except Exception as e:
            logger.error(f"Error creating run store tables: {e}")
            raise

    def save_run_result(self, result: RunResult) -> Optional[int]:
        """Insert a run, replacing any earlier row for the same dataset/model/seed"""
        try:
            with self.connection:
                cursor = self.connection.execute("""
                    INSERT INTO run_results (
                        dataset_id,
                        model,
                        seed,
                        status,
                        rmse,
                        nlpd,
                        crps,
                        i_star_mean,
                        records,
                        runtime_seconds,
                        error_message,
                        failed_iteration
                    ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                    ON CONFLICT (dataset_id, model, seed) DO UPDATE SET
                        status = excluded.status,
                        rmse = excluded.rmse,
                        nlpd = excluded.nlpd,
                        crps = excluded.crps,
                        i_star_mean = excluded.i_star_mean,
                        records = excluded.records,
                        runtime_seconds = excluded.runtime_seconds,
                        error_message = excluded.error_message,
                        failed_iteration = excluded.failed_iteration,
                        created_at = CURRENT_TIMESTAMP
                """, (
                    result.dataset_id,
                    result.model,
                    result.seed,
                    result.status,
                    result.rmse,
                    result.nlpd,
                    result.crps,
                    result.i_star_mean,
                    result.records,
                    result.runtime_seconds,
                    result.error_message,
                    result.failed_iteration
                ))
                logger.info(f"Saved {result.status} run {result.key} to run store")
                return cursor.lastrowid

        except Exception as e:
            logger.error(f"Error saving run {result.key} to run store: {e}")
            return None

    def get_run_results(self, status: Optional[str] = None) -> List[RunResult]:
        """Retrieve runs ordered by dataset, model and seed"""
        try:
            query = "SELECT * FROM run_results"
            params = ()
            if status is not None:
                query += " WHERE status = ?"
                params = (status,)
            query += " ORDER BY dataset_id, model, seed"
            with self.connection:
                cursor = self.connection.execute(query, params)
                return [RunResult(**dict(row)) for row in cursor.fetchall()]

        except Exception as e:
            logger.error(f"Error retrieving run results: {e}")
            return []

    def get_completed_keys(self) -> Set[tuple]:
        return {result.key for result in self.get_run_results(status=RunStatus.COMPLETED)}

    def clear_run_results(self) -> int:
        try:
            with self.connection:
                cursor = self.connection.execute("DELETE FROM run_results")
                logger.info(f"Cleared {cursor.rowcount} runs from run store")
                return cursor.rowcount

        except Exception as e:
            logger.error(f"Error clearing run store: {e}")
            return 0

    def save_bench_log(self, bench_log: BenchLog) -> Optional[int]:
        """
        Save a benchmark log
        Returns the log_id if successful, None otherwise
        """
        try:
            with self.connection:
                cursor = self.connection.execute("""
                    INSERT INTO bench_logs (
                        started_at,
                        finished_at,
                        runs_processed,
                        runs_succeeded,
                        runs_failed,
                        status,
                        error_message
                    ) VALUES (?, ?, ?, ?, ?, ?, ?)
                """, (
                    bench_log.started_at,
                    bench_log.finished_at,
                    bench_log.runs_processed,
                    bench_log.runs_succeeded,
                    bench_log.runs_failed,
                    bench_log.status,
                    bench_log.error_message
                ))

                log_id = cursor.lastrowid
                logger.info(f"Bench log saved with ID: {log_id}")
                return log_id

        except Exception as e:
            logger.error(f"Error saving bench log: {e}")
            return None

    def get_last_bench_log(self) -> Optional[BenchLog]:
        try:
            with self.connection:
                cursor = self.connection.execute("""
                    SELECT * FROM bench_logs
                    ORDER BY log_id DESC
                    LIMIT 1
                """)
                result = cursor.fetchone()
                return BenchLog(**dict(result)) if result else None
        except Exception as e:
            logger.error(f"Error retrieving last bench log: {e}")
            return None
