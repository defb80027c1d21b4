"""Tests for constants, bounds, schedules, and the smoothed-variance check."""

import math
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(
    0, os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
)

from src.classification import (
    SOFTMAX_LINEAR,
    ClassificationOracle,
    Dataset,
    LabelMode,
    ModelSpec,
    attach_teacher_labels,
    fit_full_batch,
    generate_gaussian_mixture,
    init_model,
)
from src.errors import (
    DegenerateProblemError,
    InvalidInputError,
    PreconditionError,
    ScheduleInfeasibleError,
)
from src.estimators import (
    PROVENANCE_BEST_FOUND,
    PROVENANCE_EXACT,
    REGIME_CONVERGES,
    REGIME_FLOOR,
    ProblemConstants,
    baseline_schedule,
    classify_regime,
    estimate_L,
    estimate_constants,
    estimate_delta,
    estimate_mu,
    estimate_sigma2,
    format_kv_report,
    lipschitz_ratio,
    lsr_schedule,
    sample_complexity,
    stage1_objective_bound,
    theorem1_bound,
    theorem2_bound,
    theorem3_bound,
    tolerant_ceil,
    tsla_schedule,
    tsla_t1_exact,
    tsla_t1_proof_form,
    verify_lemma1,
)
from src.labels import SOURCE_TEACHER, SmoothingSpec
from src.synthetic import NoiseSpec, SyntheticOracle, make_pl_sine, pl_sine_value

F0_AT_THREE = float(pl_sine_value(np.array([3.0])))


def _pl_sine_constants(delta, sigma2=1.0, mu=0.1755):
    return ProblemConstants(L=8.0, mu=mu, sigma2=sigma2, delta=delta, f_at_w0=F0_AT_THREE)


class TestBounds:
    """Closed-form bound calculators."""

    def test_theorem1(self):
        assert theorem1_bound(2.0, 0.5, 8, 0.1, 3.0) == pytest.approx(1.0 + 0.6)

    def test_theorem3(self):
        assert theorem3_bound(2.0, 0.1, 40, 8.0, 1.0) == pytest.approx(1.0 + 0.8)

    def test_theorem3_needs_small_step(self):
        with pytest.raises(PreconditionError):
            theorem3_bound(2.0, 0.2, 40, 8.0, 1.0)

    def test_theorem2(self):
        assert theorem2_bound(0.05, 1.0, 0.2, 0.01, 1000, 8.0) == pytest.approx(0.1 + 0.08)

    def test_stage1_objective_bound(self):
        value = stage1_objective_bound(4.0, 0.5, 0.2, 10, 0.5, 0.2, 1.0)
        assert value == pytest.approx(math.exp(-1.0) * 4.0 + 0.6 / 0.4)

    def test_horizon_validation(self):
        with pytest.raises(InvalidInputError):
            theorem1_bound(1.0, 0.1, 0, 0.0, 1.0)
        with pytest.raises(InvalidInputError):
            theorem1_bound(1.0, 0.0, 10, 0.0, 1.0)


class TestSchedules:
    """Regimes and the three iteration schedules."""

    def test_tolerant_ceil(self):
        assert tolerant_ceil(3.0 + 1e-12) == 3
        assert tolerant_ceil(3.001) == 4
        assert tolerant_ceil(0.0) == 0

    def test_regime_threshold(self):
        assert classify_regime(0.001, 0.1, 1.0).name == REGIME_CONVERGES
        floor = classify_regime(0.25, 0.1, 1.0)
        assert floor.name == REGIME_FLOOR
        assert floor.floor == pytest.approx(1.0)
        assert floor.threshold == pytest.approx(0.0025)

    def test_regime_validation(self):
        with pytest.raises(InvalidInputError):
            classify_regime(0.1, 1.0, 1.0)
        with pytest.raises(InvalidInputError):
            classify_regime(0.1, 0.1, 0.0)

    def test_lsr_schedule_converging(self):
        plan = lsr_schedule(_pl_sine_constants(0.001), 0.1)
        assert plan.eta == 0.125
        assert plan.theta == pytest.approx(1 / 1.001)
        assert plan.T == math.ceil(4 * F0_AT_THREE / (0.125 * 0.01))
        assert 28_900 < plan.T < 29_100

    def test_lsr_schedule_floor(self):
        plan = lsr_schedule(_pl_sine_constants(0.25), 0.1)
        assert plan.T == math.ceil(F0_AT_THREE / (0.125 * 0.25))

    def test_lsr_schedule_needs_delta(self):
        with pytest.raises(DegenerateProblemError):
            lsr_schedule(_pl_sine_constants(0.0), 0.1)

    def test_baseline_schedule(self):
        plan = baseline_schedule(_pl_sine_constants(0.0), 0.2)
        assert plan.eta == pytest.approx(0.0025)
        assert plan.theta == 0.0
        assert 362_000 < plan.T < 363_000

    def test_tsla_schedule(self):
        constants = _pl_sine_constants(0.05)
        schedule = tsla_schedule(constants, 0.15)
        assert schedule.theta == pytest.approx(1 / 1.05)
        assert schedule.eta1 == 0.125
        assert schedule.eta2 == pytest.approx(0.00140625)
        assert schedule.T1 == tolerant_ceil(tsla_t1_exact(constants))
        assert 100 < schedule.T1 < 250
        expected_t2 = 8.0 * 0.05 * 1.0 / (constants.mu * schedule.eta2 * 0.15 ** 2)
        assert schedule.T2 == tolerant_ceil(expected_t2)

    def test_t1_forms_agree(self):
        constants = _pl_sine_constants(0.05)
        assert tsla_t1_exact(constants) == pytest.approx(tsla_t1_proof_form(constants), rel=1e-12)

    def test_tsla_infeasible(self):
        constants = ProblemConstants(L=8.0, mu=0.1, sigma2=10.0, delta=1.0, f_at_w0=1.0)
        with pytest.raises(ScheduleInfeasibleError):
            tsla_schedule(constants, 0.1)

    def test_tsla_degenerate(self):
        with pytest.raises(DegenerateProblemError):
            tsla_schedule(_pl_sine_constants(0.0), 0.1)

    def test_sample_complexity(self):
        result = sample_complexity(_pl_sine_constants(0.05), 0.15)
        assert set(result) == {"baseline", "lsr", "tsla"}
        assert result["lsr"] == math.inf
        assert result["tsla"] < result["baseline"]

    def test_constants_validation(self):
        with pytest.raises(InvalidInputError):
            ProblemConstants(L=1.0, mu=2.0, sigma2=1.0, delta=0.1, f_at_w0=1.0)
        with pytest.raises(InvalidInputError):
            ProblemConstants(L=1.0, mu=0.5, sigma2=1.0, delta=0.1, f_at_w0=-1.0)


class TestWorkedExamples:
    """Hand-computed bound and schedule values."""

    @pytest.mark.parametrize("bound, args, expected", [
        (theorem1_bound, (1.0, 0.1, 100, 0.01, 1.0), 0.22),
        (theorem3_bound, (1.0, 0.01, 1000, 1.0, 1.0), 0.21),
        (theorem2_bound, (0.1, 1.0, 0.1, 0.005, 160_000, 1.0), 0.01),
    ])
    def test_bound_values(self, bound, args, expected):
        assert bound(*args) == pytest.approx(expected, rel=1e-12)

    def test_tsla_schedule_values(self):
        constants = ProblemConstants(L=1.0, mu=0.1, sigma2=1.0, delta=0.1, f_at_w0=1.0)
        schedule = tsla_schedule(constants, 0.1)
        assert schedule.theta == pytest.approx(1 / 1.1, rel=1e-12)
        assert schedule.theta == pytest.approx(0.90909, abs=1e-5)
        assert schedule.eta1 == 1.0
        assert schedule.T1 == 1
        assert schedule.eta2 == pytest.approx(0.005, rel=1e-12)
        assert schedule.T2 == 160_000

    @pytest.mark.parametrize("epsilon, sigma2", [(0.1, 1.0), (0.3, 2.0), (0.05, 0.5)])
    def test_regime_boundary_converges(self, epsilon, sigma2):
        regime = classify_regime(epsilon ** 2 / (4.0 * sigma2), epsilon, sigma2)
        assert regime.name == REGIME_CONVERGES
        assert classify_regime(np.nextafter(regime.threshold, 1.0), epsilon, sigma2).name == REGIME_FLOOR


class TestBoundShape:
    """Monotonicity of the bounds and agreement between regime and schedule."""

    HORIZONS = (1, 10, 100, 1000, 10_000)
    LEVELS = (0.0, 0.01, 0.1, 0.5, 1.0, 4.0)

    @pytest.mark.parametrize("bound, make_args", [
        (theorem1_bound, lambda T: (1.0, 0.1, T, 0.2, 1.0)),
        (theorem3_bound, lambda T: (1.0, 0.1, T, 8.0, 1.0)),
        (theorem2_bound, lambda T: (0.2, 1.0, 0.1, 0.01, T, 8.0)),
    ])
    def test_nonincreasing_in_horizon(self, bound, make_args):
        values = [bound(*make_args(T)) for T in self.HORIZONS]
        assert all(b <= a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("bound, make_args", [
        (theorem1_bound, lambda v: (1.0, 0.1, 100, v, 1.0)),
        (theorem1_bound, lambda v: (1.0, 0.1, 100, 0.2, v)),
        (theorem3_bound, lambda v: (1.0, 0.1, 100, 8.0, v)),
        (theorem2_bound, lambda v: (v, 1.0, 0.1, 0.01, 100, 8.0)),
        (theorem2_bound, lambda v: (0.2, v, 0.1, 0.01, 100, 8.0)),
    ])
    def test_nondecreasing_in_delta_and_sigma2(self, bound, make_args):
        values = [bound(*make_args(v)) for v in self.LEVELS]
        assert all(b >= a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("L, epsilon", [
        (1.0, 0.01), (1.0, 0.5), (1.0, 0.99), (8.0, 0.1), (8.0, 0.9), (100.0, 0.3),
    ])
    def test_second_step_not_larger_than_first(self, L, epsilon):
        constants = ProblemConstants(L=L, mu=0.1, sigma2=1.0, delta=0.1, f_at_w0=2.0)
        schedule = tsla_schedule(constants, epsilon)
        assert schedule.eta2 <= schedule.eta1

    @pytest.mark.parametrize("delta, epsilon, sigma2, f0", [
        (0.5, 0.1, 1.0, 10.0),
        (0.25, 0.2, 2.0, 3.0),
        (1.0, 0.5, 0.7, 70.0),
        (0.001, 0.1, 1.0, 1.0),
        (0.0025, 0.1, 1.0, 1.0),
        (0.01, 0.4, 2.0, 5.0),
    ])
    def test_regime_matches_bound_at_scheduled_horizon(self, delta, epsilon, sigma2, f0):
        constants = ProblemConstants(L=1.0, mu=0.1, sigma2=sigma2, delta=delta, f_at_w0=f0)
        regime = classify_regime(delta, epsilon, sigma2)
        plan = lsr_schedule(constants, epsilon)
        value = theorem1_bound(f0, plan.eta, plan.T, delta, sigma2)
        if regime.name == REGIME_FLOOR:
            assert value <= regime.floor * (1 + 1e-12)
            assert value == pytest.approx(regime.floor, rel=0.05)
            assert value > epsilon ** 2
        else:
            assert value <= epsilon ** 2 * (1 + 1e-12)


class TestSyntheticEstimates:
    """Constants of the analytic oracles."""

    def setup_method(self):
        self.oracle = SyntheticOracle(make_pl_sine(1), NoiseSpec(1.0, 0.05, 0.5))

    def test_constants_are_exact(self):
        constants = estimate_constants(self.oracle)
        assert constants.L == 8.0
        assert constants.sigma2 == 1.0
        assert constants.delta == 0.05
        assert constants.f_at_w0 == pytest.approx(F0_AT_THREE)
        assert constants.f_star_provenance == PROVENANCE_EXACT

    def test_sampled_lipschitz_below_analytic(self):
        assert estimate_L(self.oracle, samples=10_000) == 8.0

    def test_duplicate_pairs_skipped(self):
        w = np.array([[1.0], [2.0]])
        u = np.array([[1.0], [2.5]])
        ratio = lipschitz_ratio(self.oracle, w, u)
        assert ratio > 0
        with pytest.raises(InvalidInputError):
            lipschitz_ratio(self.oracle, w, w)

    def test_mu_skips_optimum(self):
        mu = estimate_mu(self.oracle, np.array([[0.0], [1.0], [-2.0]]), 0.0)
        assert mu > 0
        with pytest.raises(InvalidInputError):
            estimate_mu(self.oracle, np.array([[0.0]]), 0.0)

    def test_delta_undefined_without_variance(self):
        oracle = SyntheticOracle(make_pl_sine(1), NoiseSpec(0.0))
        with pytest.raises(DegenerateProblemError):
            estimate_delta(oracle)

    def test_lemma1_monte_carlo(self):
        report = verify_lemma1(self.oracle, None, SmoothingSpec(0.5), draws=20_000, seed=3)
        assert report.method == "monte_carlo"
        assert report.lemma1_bound == pytest.approx(0.5 + 0.5 * 0.05)
        assert report.smoothed_second_moment <= report.lemma1_bound + 3 * report.standard_error

    def test_lemma1_needs_enough_draws(self):
        with pytest.raises(InvalidInputError):
            verify_lemma1(self.oracle, None, SmoothingSpec(0.5), draws=10)


class TestClassificationEstimates:
    """Exact finite-sum variances and sampled L and mu."""

    def setup_method(self):
        self.data = generate_gaussian_mixture(3, 2, 40, 2.0, 0.1, seed=6)
        self.spec = ModelSpec(SOFTMAX_LINEAR, 2, 3)
        self.w0 = np.random.default_rng(0).normal(0, 0.3, 9)
        self.oracle = ClassificationOracle(self.spec, self.data, w0=self.w0)

    def test_sigma2_by_enumeration(self):
        grads = self.oracle.example_gradients(self.oracle.w0, LabelMode.one_hot())
        mean = grads.mean(axis=0)
        expected = np.mean(np.sum((grads - mean) ** 2, axis=1))
        assert estimate_sigma2(self.oracle) == pytest.approx(expected, rel=1e-12)

    def test_delta_positive(self):
        assert estimate_delta(self.oracle) > 0

    def test_estimates_ignore_example_order(self):
        order = np.random.default_rng(2).permutation(self.data.num_examples)
        shuffled = Dataset(self.data.features[order], self.data.labels[order], self.data.num_classes)
        oracle = ClassificationOracle(self.spec, shuffled, w0=self.w0)
        assert estimate_sigma2(oracle) == pytest.approx(estimate_sigma2(self.oracle), rel=1e-12)
        assert estimate_delta(oracle) == pytest.approx(estimate_delta(self.oracle), rel=1e-12)

    def test_estimates_ignore_duplication(self):
        """Repeating every example leaves population moments unchanged."""
        tripled = Dataset(
            np.tile(self.data.features, (3, 1)), np.tile(self.data.labels, 3), self.data.num_classes
        )
        oracle = ClassificationOracle(self.spec, tripled, w0=self.w0)
        assert estimate_sigma2(oracle) == pytest.approx(estimate_sigma2(self.oracle), rel=1e-12)
        assert estimate_delta(oracle) == pytest.approx(estimate_delta(self.oracle), rel=1e-12)

    def test_one_hot_teacher_gives_unit_delta(self):
        data = Dataset(
            self.data.features, self.data.labels, self.data.num_classes,
            teacher_labels=self.data.one_hot_matrix(),
        )
        oracle = ClassificationOracle(self.spec, data, w0=self.w0)
        assert estimate_delta(oracle, source=SOURCE_TEACHER) == pytest.approx(1.0, rel=1e-12)

    def test_fitted_teacher_gives_small_delta(self):
        teacher = fit_full_batch(init_model(SOFTMAX_LINEAR, 2, 3), self.data, 0.5, 500)
        data = attach_teacher_labels(self.data, teacher)
        oracle = ClassificationOracle(self.spec, data, w0=teacher.params)
        delta = estimate_delta(oracle, source=SOURCE_TEACHER)
        assert 0.0 <= delta < 1.0
        assert delta < estimate_delta(oracle)

    def test_single_example_is_degenerate(self):
        data = Dataset([[1.0, 2.0]], [0], 2)
        oracle = ClassificationOracle(ModelSpec(SOFTMAX_LINEAR, 2, 2), data)
        assert estimate_sigma2(oracle) == 0.0
        with pytest.raises(DegenerateProblemError):
            estimate_delta(oracle)

    def test_lemma1_exact_bound_holds(self):
        """The smoothed second moment never exceeds its convex-combination bound."""
        for theta in (0.1, 0.5, 0.9):
            report = verify_lemma1(self.oracle, None, SmoothingSpec(theta))
            assert report.method == "exact"
            assert report.slack >= -1e-12

    def test_lemma1_theta_one(self):
        report = verify_lemma1(self.oracle, None, SmoothingSpec(0.5), theta=1.0)
        assert report.smoothed_second_moment == pytest.approx(
            report.delta_hat * report.sigma2_hat, rel=1e-9
        )

    def test_estimate_constants_best_found(self):
        constants = estimate_constants(self.oracle, samples=50, fit_steps=50)
        assert constants.f_star_provenance == PROVENANCE_BEST_FOUND
        assert 0 < constants.mu <= constants.L
        assert constants.f_star <= constants.f_at_w0


class TestReportFormat:
    """Flat key-value text."""

    def test_constants_report(self):
        text = format_kv_report(_pl_sine_constants(0.05), "c.")
        lines = text.splitlines()
        assert lines[0] == "c.L=8"
        assert "c.delta=0.050000000000000003" in lines
        assert lines[-1] == "c.f_star_provenance=exact"