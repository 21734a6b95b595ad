"""Unit tests for majorizer/run_manager.py"""

import threading
import time

import pytest

from pfbound_cli.majorizer.models import MetricsTrace, RunJob, TrainConfig
from pfbound_cli.majorizer.run_manager import RunManager


def make_job(label="sgd", seed=0):
    return RunJob(label=label, config=TrainConfig(method="sgd", eta0=1.0, lam=0.1, seed=seed))


class TestRunManager:
    """Test run manager outcome capture and concurrency control."""

    def test_init(self):
        manager = RunManager(lambda job: MetricsTrace(), max_workers=3)

        assert manager.max_workers == 3
        assert manager.get_running_count() == 0

    def test_worker_floor(self):
        assert RunManager(lambda job: MetricsTrace(), max_workers=0).max_workers == 1

    def test_execute_success(self):
        manager = RunManager(lambda job: MetricsTrace())

        outcome = manager.execute(make_job())

        assert outcome.status == "completed"
        assert outcome.success is True
        assert outcome.duration is not None
        assert manager.get_running_count() == 0
        assert manager.get_running() == []

    def test_execute_diverged(self):
        manager = RunManager(lambda job: MetricsTrace(diverged=True, diagnostic="step 3: overflow"))

        outcome = manager.execute(make_job())

        assert outcome.status == "diverged"
        assert outcome.error_message == "step 3: overflow"
        assert outcome.success is False

    def test_execute_failure_is_captured(self):
        def boom(job):
            raise RuntimeError("Test error")

        manager = RunManager(boom)

        outcome = manager.execute(make_job())

        assert outcome.status == "failed"
        assert "Test error" in outcome.error_message
        assert manager.get_running_count() == 0

    def test_run_all_orders_by_label_and_seed(self):
        def slow_first(job):
            # earlier seeds finish later
            time.sleep(0.01 * (3 - job.config.seed))
            return MetricsTrace()

        manager = RunManager(slow_first, max_workers=4)
        jobs = [make_job("spfb", 2), make_job("sgd", 1), make_job("spfb", 0), make_job("sgd", 0)]

        outcomes = manager.run_all(jobs)

        assert list(outcomes) == [("sgd", 0), ("sgd", 1), ("spfb", 0), ("spfb", 2)]

    def test_run_all_empty(self):
        assert RunManager(lambda job: MetricsTrace()).run_all([]) == {}

    def test_concurrency_cap(self):
        peak = []
        lock = threading.Lock()
        manager = None

        def track(job):
            with lock:
                peak.append(manager.get_running_count())
            time.sleep(0.02)
            return MetricsTrace()

        manager = RunManager(track, max_workers=2)
        manager.run_all([make_job("sgd", s) for s in range(6)])

        assert max(peak) <= 2

    def test_update_settings(self):
        manager = RunManager(lambda job: MetricsTrace(), max_workers=2)

        manager.update_settings(max_workers=5)
        assert manager.max_workers == 5

        manager.update_settings()
        assert manager.max_workers == 5

    @pytest.mark.parametrize("workers", [1, 3])
    def test_same_results_for_any_worker_count(self, workers):
        manager = RunManager(lambda job: MetricsTrace(sigma_sq=float(job.config.seed)), max_workers=workers)

        outcomes = manager.run_all([make_job("sgd", s) for s in range(4)])

        assert [o.trace.sigma_sq for o in outcomes.values()] == [0.0, 1.0, 2.0, 3.0]
