"""Unit tests for majorizer/linear_model.py"""

import math

import numpy as np
import pytest

from pfbound_cli.errors import DomainError
from pfbound_cli.majorizer import linear_model as lm
from pfbound_cli.majorizer.models import FeatureMap, LabeledDataset
from pfbound_cli.majorizer.oracles import exact_log_partition, fd_gradient


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def problem(rng):
    X = rng.standard_normal((30, 4))
    labels = rng.integers(1, 4, size=30)
    dataset = LabeledDataset(features=X, labels=labels, n_classes=3)
    return dataset, FeatureMap.for_dataset(dataset)


class TestFeatures:
    """Test the joint feature maps."""

    def test_block_one_hot_placement(self):
        fmap = FeatureMap("block_one_hot", n=3, p=2)

        f = lm.feature_vector(fmap, np.array([5.0, 7.0]), 2)

        assert f.tolist() == [0.0, 0.0, 5.0, 7.0, 0.0, 0.0]

    def test_identity_binary(self):
        fmap = FeatureMap("identity_binary", n=2, p=2)
        x = np.array([1.0, -2.0])

        assert lm.feature_vector(fmap, x, 1).tolist() == [1.0, -2.0]
        assert lm.feature_vector(fmap, x, 2).tolist() == [-1.0, 2.0]

    @pytest.mark.parametrize("y", [0, 4])
    def test_class_out_of_range(self, y):
        with pytest.raises(DomainError):
            lm.feature_vector(FeatureMap("block_one_hot", n=3, p=2), np.ones(2), y)

    def test_wrong_input_width(self):
        with pytest.raises(DomainError):
            lm.feature_list(FeatureMap("block_one_hot", n=3, p=2), np.ones(3))

    def test_batch_features_match_feature_vector(self, problem):
        dataset, fmap = problem
        feats = lm.batch_features(fmap, dataset.features[:5])

        assert feats.shape == (5, 3, 12)
        for j in range(5):
            for y in range(1, 4):
                np.testing.assert_array_equal(feats[j, y - 1], lm.feature_vector(fmap, dataset.features[j], y))

    def test_scores_and_pullback(self, problem, rng):
        dataset, fmap = problem
        theta = rng.standard_normal(fmap.d)
        X = dataset.features[:6]
        feats = lm.batch_features(fmap, X)

        np.testing.assert_allclose(lm.scores(theta, X, fmap), feats @ theta, atol=1e-12)

        weights = rng.standard_normal((6, 3))
        expected = np.einsum("jy,jyd->d", weights, feats)
        np.testing.assert_allclose(lm.pullback(fmap, weights, X), expected, atol=1e-12)

    def test_identity_binary_scores(self, rng):
        fmap = FeatureMap("identity_binary", n=2, p=3)
        X = rng.standard_normal((4, 3))
        theta = rng.standard_normal(3)

        np.testing.assert_allclose(lm.scores(theta, X, fmap), lm.batch_features(fmap, X) @ theta, atol=1e-12)


class TestLoss:
    """Test partition function, loss and gradients."""

    def test_log_partition_matches_enumeration(self, problem, rng):
        dataset, fmap = problem
        theta = rng.standard_normal(fmap.d)
        x = dataset.features[0]

        assert lm.log_partition(theta, x, fmap) == pytest.approx(
            exact_log_partition(theta, lm.feature_list(fmap, x)), abs=1e-12)

    def test_log_partition_large_scores(self):
        fmap = FeatureMap("block_one_hot", n=2, p=1)

        value = lm.log_partition(np.array([1000.0, 0.0]), np.array([1.0]), fmap)

        assert value == pytest.approx(1000.0)

    def test_loss_at_zero_is_log_n(self, problem):
        dataset, fmap = problem

        assert lm.regularized_loss(np.zeros(fmap.d), dataset, 0.5, fmap) == pytest.approx(math.log(3))

    def test_regularizer(self, problem, rng):
        dataset, fmap = problem
        theta = rng.standard_normal(fmap.d)

        diff = lm.regularized_loss(theta, dataset, 2.0, fmap) - lm.regularized_loss(theta, dataset, 0.0, fmap)

        assert diff == pytest.approx(theta @ theta)

    def test_negative_lambda(self, problem):
        dataset, fmap = problem
        with pytest.raises(DomainError):
            lm.regularized_loss(np.zeros(fmap.d), dataset, -0.1, fmap)

    def test_wrong_theta_length(self, problem):
        dataset, fmap = problem
        with pytest.raises(DomainError):
            lm.regularized_loss(np.zeros(fmap.d + 1), dataset, 0.1, fmap)

    def test_full_gradient_matches_finite_differences(self, problem, rng):
        dataset, fmap = problem
        theta = 0.3 * rng.standard_normal(fmap.d)

        fd = fd_gradient(lambda th: lm.regularized_loss(th, dataset, 0.1, fmap), theta)

        np.testing.assert_allclose(lm.full_gradient(theta, dataset, 0.1, fmap), fd, atol=1e-6)

    def test_sample_gradients_average_to_batch_gradient(self, problem, rng):
        dataset, fmap = problem
        theta = rng.standard_normal(fmap.d)
        X, labels0 = dataset.features[:8], dataset.labels0[:8]

        per_sample = lm.sample_gradients(theta, X, labels0, 0.2, fmap)

        np.testing.assert_allclose(per_sample.mean(axis=0), lm.batch_gradient(theta, X, labels0, 0.2, fmap), atol=1e-12)
        np.testing.assert_allclose(
            per_sample[0], lm.sample_gradient(theta, X[0], int(labels0[0]) + 1, 0.2, fmap), atol=1e-12)

    def test_identity_binary_gradient(self, rng):
        X = rng.standard_normal((20, 3))
        dataset = LabeledDataset(features=X, labels=rng.integers(1, 3, size=20), n_classes=2)
        fmap = FeatureMap.for_dataset(dataset, kind="identity_binary")
        theta = rng.standard_normal(3)

        fd = fd_gradient(lambda th: lm.regularized_loss(th, dataset, 0.0, fmap), theta)

        np.testing.assert_allclose(lm.full_gradient(theta, dataset, 0.0, fmap), fd, atol=1e-6)


class TestPrediction:
    """Test prediction helpers and data statistics."""

    def test_predict_proba_sums_to_one(self, problem, rng):
        dataset, fmap = problem
        probs = lm.predict_proba(rng.standard_normal(fmap.d), dataset.features[:4], fmap)

        assert probs.shape == (4, 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_ties_go_to_lowest_class(self, problem):
        dataset, fmap = problem

        assert set(lm.predict(np.zeros(fmap.d), dataset.features, fmap).tolist()) == {1}

    def test_accuracy(self):
        X = np.array([[1.0], [-1.0]])
        dataset = LabeledDataset(features=X, labels=[1, 2], n_classes=2)
        fmap = FeatureMap.for_dataset(dataset)

        assert lm.accuracy(np.array([1.0, -1.0]), dataset, fmap) == 1.0
        assert lm.accuracy(np.array([-1.0, 1.0]), dataset, fmap) == 0.0

    def test_max_sq_norm_and_diameter(self):
        X = np.array([[3.0, 4.0], [1.0, 0.0]])
        dataset = LabeledDataset(features=X, labels=[1, 2], n_classes=2)

        assert lm.max_sq_norm(dataset) == 25.0
        assert lm.feature_diameter_sq(dataset, FeatureMap.for_dataset(dataset)) == 50.0
        assert lm.feature_diameter_sq(dataset, FeatureMap.for_dataset(dataset, "identity_binary")) == 100.0
