"""Unit tests for majorizer/optimizers.py"""

import math

import numpy as np
import pytest

from pfbound_cli.data_io import split_and_scale, synth_logreg
from pfbound_cli.errors import DomainError, NumericalError
from pfbound_cli.majorizer.bound_full import build_bound
from pfbound_cli.majorizer.bound_lowrank import build_lowrank_from_features
from pfbound_cli.majorizer.linear_model import batch_features, full_gradient, regularized_loss
from pfbound_cli.majorizer.models import BoundParams, FeatureMap, LabeledDataset, TrainConfig
from pfbound_cli.majorizer.optimizers import (
    expected_bound_step,
    log_spaced_steps,
    lr_at,
    lspfb_step,
    make_rng,
    pfb_batch_step,
    rate_slope,
    sgd_step,
    solve_fixed_point,
    solve_reference,
    spfb_step,
    theory_constants,
    train,
)


@pytest.fixture
def split():
    dataset, _ = synth_logreg(d=4, n=3, T=500, seed=1)
    train_set, test_set, _ = split_and_scale(dataset, test_frac=0.2, seed=0, scale="unit_norm")
    return train_set, test_set, FeatureMap.for_dataset(train_set)


class TestSchedules:
    """Test learning-rate schedules and the random source."""

    def test_inverse_t(self):
        config = TrainConfig(method="sgd", eta0=2.0, lam=0.1)

        assert lr_at(config, 1) == 2.0
        assert lr_at(config, 4) == 0.5

    def test_constant(self):
        config = TrainConfig(method="sgd", eta0=2.0, lam=0.1, schedule="constant")

        assert lr_at(config, 100) == 2.0

    def test_step_index_is_one_based(self):
        with pytest.raises(DomainError):
            lr_at(TrainConfig(method="sgd", eta0=1.0, lam=0.1), 0)

    def test_rng_is_seeded(self):
        assert make_rng(5).permutation(10).tolist() == make_rng(5).permutation(10).tolist()


class TestSteps:
    """Test single update rules."""

    def test_sgd_step(self):
        np.testing.assert_allclose(sgd_step(np.ones(2), np.array([1.0, -1.0]), 0.5), [0.5, 1.5])

    def test_spfb_step_with_zero_curvature(self):
        bound = BoundParams(log_z=0.0, mu=np.array([1.0, 0.0]), sigma=np.zeros((2, 2)))
        theta = np.array([1.0, 1.0])

        out = spfb_step(theta, bound, np.zeros(2), eta=0.5, lam=2.0)

        # (mu - f + lam theta) / lam = [1.5, 1.0]
        np.testing.assert_allclose(out, theta - 0.5 * np.array([1.5, 1.0]))

    def test_spfb_step_solves_preconditioned_system(self):
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((4, 5))
        theta = rng.standard_normal(5)
        bound = build_bound(theta, feats)
        f_true = feats[2]

        out = spfb_step(theta, bound, f_true, eta=0.3, lam=0.1)

        lhs = (bound.sigma + 0.1 * np.eye(5)) @ (theta - out) / 0.3
        np.testing.assert_allclose(lhs, bound.mu - f_true + 0.1 * theta, atol=1e-10)

    def test_lspfb_full_rank_matches_spfb(self):
        rng = np.random.default_rng(1)
        feats = rng.standard_normal((4, 5))
        theta = rng.standard_normal(5)
        bound = build_bound(theta, feats)
        state = build_lowrank_from_features(theta, feats[None], k=5)

        a = spfb_step(theta, bound, feats[0], eta=0.7, lam=0.2)
        b = lspfb_step(theta, state, feats[0], eta=0.7, lam=0.2)

        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_singular_system(self):
        bound = BoundParams(log_z=0.0, mu=np.zeros(2), sigma=np.zeros((2, 2)))

        with pytest.raises(NumericalError):
            spfb_step(np.zeros(2), bound, np.zeros(2), eta=1.0, lam=0.0)

    def test_negative_lambda(self):
        bound = BoundParams(log_z=0.0, mu=np.zeros(2), sigma=np.eye(2))
        with pytest.raises(DomainError):
            spfb_step(np.zeros(2), bound, np.zeros(2), eta=1.0, lam=-1.0)


class TestTrain:
    """Test the training loop."""

    def test_record_count(self, split):
        train_set, test_set, fmap = split
        config = TrainConfig(method="sgd", eta0=1.0, lam=0.1, batch_size=100, epochs=1)

        trace = train(config, train_set, test_set, fmap)

        assert [r.step for r in trace.records] == [0, 1, 2, 3, 4]
        assert trace.records[0].epoch == 0.0
        assert trace.final.epoch == 1.0
        assert trace.diverged is False

    def test_step_zero_is_loss_at_origin(self, split):
        train_set, test_set, fmap = split
        trace = train(TrainConfig(method="spfb", eta0=1.0, lam=0.1, batch_size=50, epochs=1),
                      train_set, test_set, fmap)

        assert trace.records[0].train_loss == pytest.approx(math.log(3))
        assert trace.records[0].test_loss == pytest.approx(math.log(3))

    def test_eval_every_in_samples(self, split):
        train_set, test_set, fmap = split
        config = TrainConfig(method="sgd", eta0=1.0, lam=0.1, batch_size=50, epochs=1, eval_every=200)

        trace = train(config, train_set, test_set, fmap)

        # 400 training samples: evaluations after 200 and 400 samples
        assert [r.step for r in trace.records] == [0, 4, 8]

    def test_eval_steps(self, split):
        train_set, _, fmap = split
        config = TrainConfig(method="sgd", eta0=1.0, lam=0.1, batch_size=10, epochs=1)

        trace = train(config, train_set, None, fmap, eval_steps=[3, 7, 40])

        assert [r.step for r in trace.records] == [0, 3, 7, 40]

    def test_deterministic(self, split):
        train_set, test_set, fmap = split
        config = TrainConfig(method="lspfb", eta0=1.0, lam=0.1, batch_size=20, epochs=1, rank=2, seed=9)

        a = train(config, train_set, test_set, fmap)
        b = train(config, train_set, test_set, fmap)

        assert [r.train_loss for r in a.records] == [r.train_loss for r in b.records]
        np.testing.assert_array_equal(a.theta, b.theta)

    @pytest.mark.parametrize("method,rank", [("spfb", None), ("lspfb", 3), ("sgd", None), ("pfb", None)])
    def test_methods_decrease_loss(self, split, method, rank):
        train_set, test_set, fmap = split
        config = TrainConfig(method=method, eta0=1.0, lam=0.1, batch_size=50, epochs=2, rank=rank)

        trace = train(config, train_set, test_set, fmap)

        assert not trace.diverged
        assert trace.final.train_loss < trace.records[0].train_loss

    def test_sigma_sq_recorded(self, split):
        train_set, test_set, fmap = split
        trace = train(TrainConfig(method="sgd", eta0=0.1, lam=0.1, batch_size=50, epochs=1),
                      train_set, test_set, fmap)

        assert trace.sigma_sq > 0

    def test_divergence_is_recorded(self, split):
        train_set, test_set, fmap = split
        config = TrainConfig(method="sgd", eta0=1e6, lam=0.1, batch_size=4, epochs=1, schedule="constant")

        with np.errstate(all="ignore"):
            trace = train(config, train_set, test_set, fmap)

        assert trace.diverged is True
        assert "step" in trace.diagnostic
        assert all(math.isfinite(r.train_loss) for r in trace.records)

    def test_independent_curvature_is_deterministic(self, split):
        train_set, test_set, fmap = split
        config = TrainConfig(method="spfb", eta0=1.0, lam=0.1, batch_size=20, epochs=2, seed=4, curvature="independent")

        a = train(config, train_set, test_set, fmap)
        b = train(config, train_set, test_set, fmap)

        np.testing.assert_array_equal(a.theta, b.theta)
        assert not a.diverged
        assert a.final.train_loss < a.records[0].train_loss

    @pytest.mark.parametrize("method,rank", [("spfb", None), ("lspfb", 3)])
    def test_independent_curvature_changes_bound_steps(self, split, method, rank):
        train_set, test_set, fmap = split
        same = TrainConfig(method=method, eta0=1.0, lam=0.1, batch_size=20, epochs=1, rank=rank, seed=4)
        independent = TrainConfig(
            method=method, eta0=1.0, lam=0.1, batch_size=20, epochs=1, rank=rank, seed=4, curvature="independent"
        )

        a = train(same, train_set, test_set, fmap)
        b = train(independent, train_set, test_set, fmap)

        assert not np.array_equal(a.theta, b.theta)
        assert b.final.train_loss < b.records[0].train_loss

    def test_independent_curvature_leaves_sgd_alone(self, split):
        train_set, test_set, fmap = split
        a = train(TrainConfig(method="sgd", eta0=1.0, lam=0.1, batch_size=20, epochs=1, seed=4),
                  train_set, test_set, fmap)
        b = train(TrainConfig(method="sgd", eta0=1.0, lam=0.1, batch_size=20, epochs=1, seed=4, curvature="independent"),
                  train_set, test_set, fmap)

        np.testing.assert_array_equal(a.theta, b.theta)

    def test_on_theta_sees_every_record(self, split):
        train_set, test_set, fmap = split
        seen = []

        trace = train(TrainConfig(method="spfb", eta0=1.0, lam=0.1, batch_size=100, epochs=1),
                      train_set, test_set, fmap, on_theta=lambda step, theta: seen.append((step, theta.copy())))

        assert [s for s, _ in seen] == [r.step for r in trace.records]
        np.testing.assert_array_equal(seen[0][1], np.zeros(fmap.d))
        np.testing.assert_array_equal(seen[-1][1], trace.theta)

    def test_rank_above_dimension(self, split):
        train_set, test_set, fmap = split
        with pytest.raises(DomainError):
            train(TrainConfig(method="lspfb", eta0=1.0, lam=0.1, rank=fmap.d + 1), train_set, test_set, fmap)

    def test_feature_map_mismatch(self, split):
        train_set, test_set, _ = split
        with pytest.raises(DomainError):
            train(TrainConfig(method="sgd", eta0=1.0, lam=0.1), train_set, test_set, FeatureMap("block_one_hot", 2, 4))


class TestReference:
    """Test the high-precision reference solver."""

    def test_converges(self, split):
        train_set, _, fmap = split

        ref = solve_reference(train_set, 0.1, fmap, tol=1e-10, max_iter=500)

        assert ref.converged
        assert ref.grad_norm <= 1e-10
        assert np.linalg.norm(full_gradient(ref.theta, train_set, 0.1, fmap)) <= 1e-10
        assert ref.loss <= regularized_loss(np.zeros(fmap.d), train_set, 0.1, fmap)

    def test_reports_non_convergence(self, split):
        train_set, _, fmap = split

        ref = solve_reference(train_set, 0.1, fmap, tol=1e-10, max_iter=1)

        assert ref.iterations == 1
        assert not ref.converged

class TestBatchStep:
    """Test the full-data bound step."""

    def test_single_sample_matches_spfb_step(self, split):
        train_set, _, fmap = split
        one = train_set.subset(np.array([5]))
        theta = np.random.default_rng(2).standard_normal(fmap.d) * 0.3
        feats = batch_features(fmap, one.features)[0]
        f_true = feats[one.labels0[0]]

        expected = spfb_step(theta, build_bound(theta, feats), f_true, eta=0.4, lam=0.1)

        np.testing.assert_allclose(pfb_batch_step(theta, one, 0.4, 0.1, fmap), expected, atol=1e-10)

    def test_unit_step_never_increases_loss(self, split):
        train_set, _, fmap = split
        theta = np.zeros(fmap.d)
        losses = [regularized_loss(theta, train_set, 0.1, fmap)]

        for _ in range(10):
            theta = pfb_batch_step(theta, train_set, 1.0, 0.1, fmap)
            losses.append(regularized_loss(theta, train_set, 0.1, fmap))

        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_stationary_point_is_kept(self, split):
        train_set, _, fmap = split
        ref = solve_reference(train_set, 0.1, fmap, tol=1e-10, max_iter=500)

        moved = pfb_batch_step(ref.theta, train_set, 0.5, 0.1, fmap)

        assert np.linalg.norm(moved - ref.theta) <= 1e-8 * 0.5


class TestFixedPoint:
    """Test the fixed point of same-sample bound steps."""

    def test_single_sample_is_the_minimizer(self, split):
        train_set, _, fmap = split
        one = train_set.subset(np.array([3]))

        ref = solve_reference(one, 0.1, fmap, tol=1e-10, max_iter=500)
        fixed = solve_fixed_point(one, 0.1, fmap)

        assert fixed.converged
        np.testing.assert_allclose(fixed.theta, ref.theta, atol=1e-6)

    def test_biased_away_from_minimizer(self, split):
        train_set, _, fmap = split
        ref = solve_reference(train_set, 0.1, fmap, tol=1e-10, max_iter=500)

        fixed = solve_fixed_point(train_set, 0.1, fmap, theta0=ref.theta)

        assert fixed.converged
        assert np.linalg.norm(expected_bound_step(fixed.theta, train_set, 0.1, fmap)) <= 1e-9
        assert fixed.loss > ref.loss
        assert np.linalg.norm(full_gradient(fixed.theta, train_set, 0.1, fmap)) > 1e-4
        # the expected same-sample step does not vanish at the minimizer
        assert np.linalg.norm(expected_bound_step(ref.theta, train_set, 0.1, fmap)) > 1e-4

    def test_expected_step_averages_single_sample_steps(self, split):
        train_set, _, fmap = split
        few = train_set.subset(np.arange(6))
        theta = np.random.default_rng(3).standard_normal(fmap.d) * 0.2
        feats = batch_features(fmap, few.features)

        steps = [
            theta - spfb_step(theta, build_bound(theta, feats[j]), feats[j, few.labels0[j]], eta=1.0, lam=0.1)
            for j in range(few.T)
        ]

        np.testing.assert_allclose(
            expected_bound_step(theta, few, 0.1, fmap, chunk_size=4), np.mean(steps, axis=0), atol=1e-10
        )

    def test_lambda_zero(self, split):
        train_set, _, fmap = split
        with pytest.raises(DomainError):
            expected_bound_step(np.zeros(fmap.d), train_set, 0.0, fmap)



class TestTheoryConstants:
    """Test the rate constants."""

    @pytest.fixture
    def unit_data(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
        dataset = LabeledDataset(features=X, labels=[1, 2, 3], n_classes=3)
        return dataset, FeatureMap.for_dataset(dataset)

    def test_values(self, unit_data):
        dataset, fmap = unit_data

        consts = theory_constants(dataset, 0.1, fmap)

        assert consts.max_x_sq == pytest.approx(1.0)
        assert consts.mu1 == pytest.approx(1.0 / (math.sqrt(1.5) + 0.1))
        assert consts.mu1 < consts.mu2
        assert consts.lambda1 == 0.1
        assert consts.lambda2 == pytest.approx(0.1 + 0.5)
        assert consts.eta0_min == pytest.approx(1.0 / (2 * consts.mu1 * 0.1))
        assert math.isnan(consts.Q)

    def test_q_infinite_at_threshold(self, unit_data):
        dataset, fmap = unit_data
        eta0_min = theory_constants(dataset, 0.1, fmap).eta0_min

        assert math.isinf(theory_constants(dataset, 0.1, fmap, eta0=eta0_min).Q)

    def test_q_finite_above_threshold(self, unit_data):
        dataset, fmap = unit_data
        eta0 = 2 * theory_constants(dataset, 0.1, fmap).eta0_min

        consts = theory_constants(dataset, 0.1, fmap, sigma_sq=1.0, eta0=eta0, initial_gap=0.0)

        assert 0 < consts.Q < math.inf

    def test_lambda_zero(self, unit_data):
        dataset, fmap = unit_data
        with pytest.raises(DomainError):
            theory_constants(dataset, 0.0, fmap)

    def test_single_class(self):
        dataset = LabeledDataset(features=np.ones((2, 2)), labels=[1, 1], n_classes=1)
        with pytest.raises(DomainError):
            theory_constants(dataset, 0.1, FeatureMap.for_dataset(dataset))


class TestRateHelpers:
    """Test step grids and slope fitting."""

    def test_log_spaced_steps(self):
        steps = log_spaced_steps(10, 1000, 5)

        assert steps == [10, 32, 100, 316, 1000]

    def test_log_spaced_steps_validation(self):
        with pytest.raises(DomainError):
            log_spaced_steps(0, 10, 5)

    def test_slope_of_power_law(self):
        steps = np.array([10, 20, 50, 100, 200])

        assert rate_slope(steps, 3.0 / steps, 10, 200) == pytest.approx(-1.0)

    def test_slope_window(self):
        steps = np.array([1, 10, 100, 1000])
        gaps = np.array([1.0, 0.1, 0.01, 5.0])

        assert rate_slope(steps, gaps, 1, 100) == pytest.approx(-1.0)

    def test_slope_needs_two_points(self):
        with pytest.raises(DomainError):
            rate_slope([1, 2], [1.0, -1.0], 1, 2)
