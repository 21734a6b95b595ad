"""
Run manager for comparisons.

Fans (method, seed) runs out over a thread pool. Runs share no mutable state;
an instance-level counter guarded by a lock tracks how many are in flight.
"""
import threading
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from ..logger import Logger
from .models import MetricsTrace, RunJob, RunOutcome

logger = Logger()

RunFn = Callable[[RunJob], MetricsTrace]


class RunManager:
    """
    Executes comparison runs concurrently.

    Results are keyed by (label, seed) and returned in sorted key order, so the
    merge does not depend on completion order.
    """

    def __init__(self, run_fn: RunFn, max_workers: int = 4):
        """
        Initialize run manager.

        Args:
            run_fn: Callable that trains one job and returns its trace
            max_workers: Maximum concurrent runs
        """
        self.run_fn = run_fn
        self.max_workers = max(1, int(max_workers))

        self._running_count = 0
        self._count_lock = threading.Lock()

        self._running: Dict[str, RunOutcome] = {}
        self._running_lock = threading.Lock()

    def execute(self, job: RunJob) -> RunOutcome:
        """Run a single job and capture its outcome. Never raises."""
        outcome = RunOutcome(job=job, start_time=datetime.now())

        with self._count_lock:
            self._running_count += 1
        with self._running_lock:
            self._running[outcome.run_id] = outcome

        try:
            logger.debug(f"Starting run: {job.label} seed={job.config.seed} (ID: {outcome.run_id})")
            outcome.trace = self.run_fn(job)
            if outcome.trace.diverged:
                outcome.status = "diverged"
                outcome.error_message = outcome.trace.diagnostic
                logger.warning(f"Run diverged: {job.label} seed={job.config.seed}: {outcome.trace.diagnostic}")
            else:
                outcome.status = "completed"
                logger.debug(f"Completed run: {job.label} seed={job.config.seed}")
        except Exception as e:
            outcome.status = "failed"
            outcome.error_message = str(e)
            logger.error(f"Failed run: {job.label} seed={job.config.seed}: {e}", exc_info=True)
        finally:
            outcome.end_time = datetime.now()
            with self._count_lock:
                self._running_count -= 1
            with self._running_lock:
                del self._running[outcome.run_id]

        return outcome

    def run_all(self, jobs: Sequence[RunJob]) -> Dict[Tuple[str, int], RunOutcome]:
        """Execute every job; returns outcomes keyed and ordered by (label, seed)."""
        if not jobs:
            return {}
        workers = min(self.max_workers, len(jobs))
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="run") as pool:
            outcomes = list(pool.map(self.execute, jobs))
        merged = {(o.job.label, o.job.config.seed): o for o in outcomes}
        return {key: merged[key] for key in sorted(merged)}

    def get_running_count(self) -> int:
        """Number of runs currently executing."""
        with self._count_lock:
            return self._running_count

    def get_running(self) -> List[RunOutcome]:
        """Snapshot of the runs currently executing."""
        with self._running_lock:
            return list(self._running.values())

    def update_settings(self, max_workers: Optional[int] = None) -> None:
        """Change the worker cap for subsequent ``run_all`` calls."""
        if max_workers is not None:
            old = self.max_workers
            self.max_workers = max(1, int(max_workers))
            logger.info(f"Updated max_workers: {old} -> {self.max_workers}")
