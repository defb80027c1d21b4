"""Tests for labels, smoothing, and the stabilized cross-entropy."""

import math
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(
    0, os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
)

from src.errors import ConfigurationError, InvalidInputError
from src.labels import (
    LabelDistribution,
    Logits,
    SmoothingSpec,
    cross_entropy,
    cross_entropy_grad_logits,
    log_softmax,
    one_hot,
    resolve_hat,
    smooth_label,
    softmax,
    uniform,
)


def _random_label(rng, k):
    return LabelDistribution(rng.dirichlet(np.ones(k)))


class TestLabelDistribution:
    """Simplex validation of probability-vector labels."""

    def test_accepts_one_hot(self):
        y = one_hot(2, 4)
        assert y.is_one_hot()
        assert y.num_classes == 4

    def test_rejects_negative_entries(self):
        with pytest.raises(InvalidInputError):
            LabelDistribution([1.2, -0.2])

    def test_rejects_bad_sum(self):
        with pytest.raises(InvalidInputError):
            LabelDistribution([0.5, 0.6])

    def test_rejects_single_class(self):
        with pytest.raises(InvalidInputError):
            LabelDistribution([1.0])

    def test_sum_tolerance_is_1e9(self):
        """A 5e-10 deviation from 1 is accepted."""
        LabelDistribution([0.5, 0.5 + 5e-10])

    def test_uniform(self):
        assert np.allclose(uniform(5).probs, 0.2)
        assert not uniform(5).is_one_hot()

    def test_rejects_bad_class_index(self):
        with pytest.raises(InvalidInputError):
            one_hot(3, 3)


class TestSmoothLabel:
    """y^LS = (1 - theta) y + theta y_hat."""

    def test_uniform_smoothing_k4(self):
        """theta=0.4 with uniform y_hat puts 0.7 on the true class, 0.1 elsewhere."""
        ls = smooth_label(one_hot(0, 4), uniform(4), 0.4)
        assert np.allclose(ls.probs, [0.7, 0.1, 0.1, 0.1], atol=1e-12)

    def test_theta_zero_is_identity(self):
        y = LabelDistribution([0.2, 0.3, 0.5])
        assert np.array_equal(smooth_label(y, uniform(3), 0.0).probs, y.probs)

    def test_fixed_hat_convex_combination(self):
        ls = smooth_label([0.0, 1.0], [0.9, 0.1], 0.5)
        assert np.allclose(ls.probs, [0.45, 0.55], atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            smooth_label(one_hot(0, 3), uniform(4), 0.1)

    def test_theta_one_rejected(self):
        with pytest.raises(InvalidInputError):
            smooth_label(one_hot(0, 3), uniform(3), 1.0)

    def test_simplex_preserved(self):
        """Random inputs always give a valid distribution."""
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(2, 12))
            ls = smooth_label(_random_label(rng, k), _random_label(rng, k), rng.uniform(0, 0.999))
            assert np.all(ls.probs >= 0)
            assert abs(ls.probs.sum() - 1.0) <= 1e-9


class TestCrossEntropy:
    """Loss values, gradient, and the label-affine structure."""

    def test_uniform_softmax_gives_log_k(self):
        assert cross_entropy([1.0, 0.0], [0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-12)
        assert cross_entropy(uniform(3), [0.0, 0.0, 0.0]) == pytest.approx(math.log(3), abs=1e-12)

    def test_matches_extended_precision(self):
        """Compared with a long-double evaluation of -log softmax."""
        z = np.array([2.0, 1.0, 0.0], dtype=np.longdouble)
        expected = float(np.log(np.sum(np.exp(z))) - z[0])
        assert cross_entropy([1.0, 0.0, 0.0], [2.0, 1.0, 0.0]) == pytest.approx(expected, rel=1e-14)

    def test_large_logits_do_not_overflow(self):
        loss = cross_entropy([0.0, 1.0], [1000.0, 0.0])
        assert loss == pytest.approx(1000.0, rel=1e-12)

    def test_nonnegative(self):
        assert cross_entropy([0.0, 1.0], [-50.0, 50.0]) >= 0.0

    def test_gradient_examples(self):
        assert np.allclose(cross_entropy_grad_logits([1.0, 0.0], [0.0, 0.0]), [-0.5, 0.5])
        assert np.allclose(cross_entropy_grad_logits(uniform(4), np.zeros(4)), 0.0)

    def test_gradient_entries_sum_to_zero(self):
        g = cross_entropy_grad_logits([1.0, 0.0, 0.0], [2.0, 1.0, 0.0])
        assert abs(g.sum()) <= 1e-9
        assert np.allclose(g, softmax([2.0, 1.0, 0.0]) - np.array([1.0, 0.0, 0.0]))

    def test_gradient_matches_finite_differences(self):
        """Central differences with step 1e-5 over 100 random pairs."""
        rng = np.random.default_rng(1)
        h = 1e-5
        for _ in range(100):
            k = int(rng.integers(2, 8))
            y = _random_label(rng, k)
            z = rng.normal(0.0, 2.0, size=k)
            analytic = cross_entropy_grad_logits(y, z)
            numeric = np.zeros(k)
            for i in range(k):
                e = np.zeros(k)
                e[i] = h
                numeric[i] = (cross_entropy(y, z + e) - cross_entropy(y, z - e)) / (2 * h)
            scale = max(np.linalg.norm(analytic), 1e-3)
            assert np.linalg.norm(analytic - numeric) / scale < 1e-6

    def test_loss_and_gradient_affine_in_label(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            k = int(rng.integers(2, 10))
            y, y_hat = _random_label(rng, k), _random_label(rng, k)
            z = rng.normal(size=k)
            theta = float(rng.uniform(0, 0.99))
            ls = smooth_label(y, y_hat, theta)
            mixed = (1 - theta) * cross_entropy(y, z) + theta * cross_entropy(y_hat, z)
            assert cross_entropy(ls, z) == pytest.approx(mixed, abs=1e-9)
            g_mixed = (1 - theta) * cross_entropy_grad_logits(y, z) + theta * cross_entropy_grad_logits(y_hat, z)
            assert np.allclose(cross_entropy_grad_logits(ls, z), g_mixed, atol=1e-9)

    def test_translation_invariance(self):
        y = LabelDistribution([0.2, 0.5, 0.3])
        z = np.array([0.3, -1.2, 2.0])
        assert cross_entropy(y, z + 7.5) == pytest.approx(cross_entropy(y, z), abs=1e-9)
        assert np.allclose(cross_entropy_grad_logits(y, z + 7.5), cross_entropy_grad_logits(y, z), atol=1e-9)

    def test_log_softmax_consistent_with_softmax(self):
        z = [0.5, 2.0, -1.0]
        assert np.allclose(np.exp(log_softmax(z)), softmax(z))

    def test_rejects_nonfinite_logits(self):
        with pytest.raises(InvalidInputError):
            Logits([0.0, np.inf])

    def test_rejects_mismatched_k(self):
        with pytest.raises(InvalidInputError):
            cross_entropy(uniform(3), [0.0, 0.0])


class TestSmoothingSpec:
    """theta domain and y_hat sources."""

    def test_theta_zero_allowed(self):
        assert SmoothingSpec(0.0).theta == 0.0

    def test_theta_one_rejected(self):
        with pytest.raises(InvalidInputError):
            SmoothingSpec(1.0)

    def test_fixed_source_needs_distribution(self):
        with pytest.raises(InvalidInputError):
            SmoothingSpec(0.2, "fixed")

    def test_resolve_uniform_and_fixed(self):
        assert np.allclose(resolve_hat(SmoothingSpec(0.1), 4), 0.25)
        spec = SmoothingSpec(0.1, "fixed", LabelDistribution([0.7, 0.3]))
        assert np.allclose(resolve_hat(spec, 2), [0.7, 0.3])

    def test_resolve_teacher_without_labels(self):
        with pytest.raises(ConfigurationError):
            resolve_hat(SmoothingSpec(0.1, "teacher"), 3)

    def test_describe(self):
        assert SmoothingSpec(0.4).describe() == "theta=0.4 uniform"
