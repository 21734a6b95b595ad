"""Unit tests for majorizer/checks.py"""

import copy
import json
import math

import pytest

from pfbound_cli.config import DEFAULTS
from pfbound_cli.errors import DomainError
from pfbound_cli.majorizer.checks import SUITES, SuiteResult, flipped_beta, run_suites, write_repro


@pytest.fixture
def check_settings():
    return copy.deepcopy(DEFAULTS["check"])


class TestSuiteResult:
    """Test margin bookkeeping."""

    def test_keeps_first_counterexample(self):
        result = SuiteResult("demo")

        assert result.observe(-1.0, x=1) is True
        assert result.observe(0.5, x=2) is False
        assert result.observe(2.0, x=3) is False

        assert result.checks == 3
        assert result.worst == 2.0
        assert result.counterexample["x"] == 2
        assert result.passed is False

    def test_every_violation_reports_failure(self):
        result = SuiteResult("demo")

        outcomes = [result.observe(m, i=i) for i, m in enumerate([1.0, 3.0, -0.5, 0.1])]

        assert outcomes == [False, False, True, False]
        assert result.counterexample["i"] == 0
        assert result.counterexample["margin"] == 1.0
        assert result.worst == 3.0

    def test_non_finite_margin_fails(self):
        result = SuiteResult("demo")

        assert result.observe(math.nan) is False
        assert result.worst == math.inf


class TestRunSuites:
    """Test the suite runner."""

    def test_all_suites_pass(self, check_settings):
        results = run_suites(check_settings, trials=2)

        assert [r.name for r in results] == list(SUITES)
        for r in results:
            assert r.passed, r.counterexample
            assert r.trials >= 1

    def test_deterministic(self, check_settings):
        a = run_suites(check_settings, names=["bound_validity"], trials=3, seed=4)
        b = run_suites(check_settings, names=["bound_validity"], trials=3, seed=4)

        assert a[0].worst == b[0].worst
        assert a[0].checks == b[0].checks

    def test_injected_bug_is_caught(self, check_settings):
        results = run_suites(check_settings, names=["bound_validity", "beta_range"], trials=20, inject_bug=True)

        assert all(not r.passed for r in results)
        assert "theta_tilde" in results[0].counterexample
        assert results[1].counterexample["beta"] < 0

    def test_unknown_suite(self, check_settings):
        with pytest.raises(DomainError):
            run_suites(check_settings, names=["no_such_suite"])

    def test_bad_trials(self, check_settings):
        with pytest.raises(DomainError):
            run_suites(check_settings, trials=0)

    def test_flipped_beta(self):
        assert flipped_beta(0.0) == -0.25


class TestRepro:
    """Test counterexample serialization."""

    def test_write_repro(self, check_settings, tmp_path):
        result = run_suites(check_settings, names=["bound_validity"], trials=20, inject_bug=True)[0]

        path = write_repro(result, tmp_path / "out")

        assert path.name == "repro_bound_validity.json"
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data["suite"] == "bound_validity"
        assert data["margin"] > 0
        assert isinstance(data["features"], list)

    def test_passing_suite_has_no_repro(self, tmp_path):
        with pytest.raises(DomainError):
            write_repro(SuiteResult("demo"), tmp_path)
