"""Unit tests for main/compare.py"""

import math
from unittest.mock import patch

import numpy as np
import pytest

from pfbound_cli.config import Config
from pfbound_cli.data_io import synth_logreg, split_and_scale
from pfbound_cli.errors import DomainError
from pfbound_cli.main.compare import (
    parse_method_spec,
    recipe_method_specs,
    run_compare,
    summarize,
    tune_eta0,
    tuning_seeds,
    write_summary_csv,
    SUMMARY_COLUMNS,
)
from pfbound_cli.main.train import PreparedData
from pfbound_cli.majorizer.models import (
    FeatureMap,
    MetricsRecord,
    MetricsTrace,
    RunJob,
    RunOutcome,
    TrainConfig,
)


def make_trace(losses, diverged=False):
    trace = MetricsTrace(diverged=diverged)
    for i, loss in enumerate(losses):
        trace.append(MetricsRecord(step=i, epoch=float(i), train_loss=loss, test_loss=loss,
                                   test_accuracy=0.5, lr=1.0, step_wall_time=0.0))
    return trace


def make_outcome(label, seed, trace, status="completed"):
    job = RunJob(label=label, config=TrainConfig(method="sgd", eta0=1.0, lam=0.1, seed=seed))
    return RunOutcome(job=job, status=status, trace=trace,
                      error_message=None if status == "completed" else "boom")


class TestMethodSpecs:
    """Test method spec parsing."""

    def test_bare_name(self):
        spec = parse_method_spec("spfb")

        assert spec.method == "spfb" and spec.label == "spfb"
        assert spec.eta0 is None

    def test_options(self):
        spec = parse_method_spec("lspfb:rank=10,eta0=0.5,batch_size=20,schedule=constant")

        assert (spec.rank, spec.eta0, spec.batch_size, spec.schedule) == (10, 0.5, 20, "constant")

    @pytest.mark.parametrize("text", ["adam", "lspfb", "spfb:eta0", "spfb:eta0=x", "spfb:momentum=0.9"])
    def test_rejected(self, text):
        with pytest.raises(DomainError):
            parse_method_spec(text)

    def test_recipe_specs(self):
        assert recipe_method_specs({"ranks": [1, 5]}) == ["spfb", "sgd", "lspfb:rank=1", "lspfb:rank=5"]


class TestSummaries:
    """Test the per-method summary rows."""

    def test_summarize(self, tmp_path):
        outcomes = {
            ("a", 0): make_outcome("a", 0, make_trace([1.0, 0.5, 0.2])),
            ("a", 1): make_outcome("a", 1, make_trace([1.0, 0.9, 0.4])),
            ("b", 0): make_outcome("b", 0, make_trace([1.0], diverged=True), status="diverged"),
        }

        rows = summarize(outcomes, ["a", "b"], {"a": 1.0, "b": 10.0}, threshold=0.5)

        a, b = rows
        assert (a["seeds"], a["diverged"], a["reached"]) == (2, 0, 2)
        assert a["epochs_to_threshold_mean"] == 1.5
        assert a["final_train_loss_mean"] == pytest.approx(0.3)
        assert (b["seeds"], b["diverged"], b["reached"]) == (1, 1, 0)
        assert math.isnan(b["epochs_to_threshold_mean"])

        path = write_summary_csv(rows, tmp_path / "summary.csv")
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header == ",".join(SUMMARY_COLUMNS)


class TestTuning:
    """Test the eta0 grid search."""

    @pytest.fixture
    def prepared(self):
        ds, _ = synth_logreg(d=3, n=2, T=200, seed=0)
        train, test, _ = split_and_scale(ds, 0.2, seed=0, scale="unit_norm")
        return PreparedData(train=train, test=test, fmap=FeatureMap.for_dataset(train), source={})

    def test_prefers_stable_rate(self, prepared):
        base = TrainConfig(method="sgd", eta0=1.0, lam=0.1, batch_size=20, epochs=1, schedule="constant")

        with np.errstate(all="ignore"):
            best = tune_eta0(base, prepared, [1.0, 1e6], tune_seeds=[5])

        assert best == 1.0

    def test_empty_grid(self, prepared):
        with pytest.raises(DomainError):
            tune_eta0(TrainConfig(method="sgd", eta0=1.0, lam=0.1), prepared, [], tune_seeds=[5])

    def test_tuning_seeds_follow_evaluation_seeds(self):
        assert tuning_seeds(10, 2) == [10, 11]
        assert tuning_seeds(3, 0) == [3]
        assert not set(tuning_seeds(10, 2)) & set(range(10))

    def test_trains_on_given_seeds(self, prepared):
        base = TrainConfig(method="sgd", eta0=1.0, lam=0.1, batch_size=20, epochs=1)

        with patch("pfbound_cli.main.compare.train", return_value=make_trace([1.0, 0.5])) as mock_train:
            tune_eta0(base, prepared, [0.1, 1.0], tune_seeds=[7, 8])

        assert [c.args[0].seed for c in mock_train.call_args_list] == [7, 8, 7, 8]


class TestRunCompare:
    """Test the compare handler end to end with stubbed training."""

    def test_tuning_never_sees_evaluation_seeds(self, tmp_path):
        config = Config(config_file=str(tmp_path / "none.yaml"))
        seen = []

        def fake_train(cfg, *args, **kwargs):
            seen.append(cfg.seed)
            return make_trace([1.0, 0.5])

        data_options = {"data": "synth:{d: 3, n: 2, T: 100, seed: 0}", "fmt": "synth", "test_frac": 0.2,
                        "seed": 0, "scale": "unit_norm"}
        with patch("pfbound_cli.main.compare.train", side_effect=fake_train):
            code = run_compare(config, ["sgd"], data_options, lam=0.1, batch_size=20, epochs=1, seeds=3,
                               epsilon=0.01, schedule="inv_t", out_dir=tmp_path / "out")

        assert code == 0
        tuned, evaluated = seen[:-3], seen[-3:]
        assert tuned and set(tuned) == {3, 4}
        assert sorted(evaluated) == [0, 1, 2]
