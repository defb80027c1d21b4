"""Tests for the SGD/LSR/TSLA loops and the random-iterate metric."""

import os
import sys
from dataclasses import replace

import numpy as np
import pytest

# Add project root to path
sys.path.insert(
    0, os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
)

from src.classification import SOFTMAX_LINEAR, ClassificationOracle, ModelSpec, generate_train_test
from src.errors import ConfigurationError, InvalidInputError
from src.labels import SmoothingSpec
from src.optimizer import (
    STAGE_ONE_HOT,
    STAGE_SMOOTHED,
    WINDOW_ALL,
    WINDOW_SECOND_STAGE,
    RunTrace,
    SgdConfig,
    StepDecay,
    TslaSchedule,
    random_iterate_stationarity,
    run_sgd_lsr,
    run_sgd_lsr_batch,
    run_tsla,
    sgd_step,
    window_mean,
)
from src.synthetic import NoiseSpec, SyntheticOracle, make_pl_sine, make_shifted_quadratic, pl_sine_value


def _assert_same_trace(a: RunTrace, b: RunTrace):
    assert np.array_equal(a.t, b.t)
    assert np.array_equal(a.stage, b.stage)
    assert np.array_equal(a.objective, b.objective)
    assert np.array_equal(a.grad_norm_sq, b.grad_norm_sq)
    assert np.array_equal(a.final_params, b.final_params)
    assert a.window_sums == b.window_sums


def _manual_trace(grad_norm_sq, stage1=0, stride=1):
    n = len(grad_norm_sq)
    return RunTrace(
        t=np.arange(n),
        stage=np.full(n, STAGE_ONE_HOT),
        objective=np.zeros(n),
        grad_norm_sq=np.asarray(grad_norm_sq, dtype=float),
        final_params=np.zeros(1),
        eval_stride=stride,
        stage1_iterations=stage1,
        total_iterations=n - 1,
    )


class TestSgdStep:
    """w - eta * g."""

    def test_zero_gradient(self):
        w = np.array([1.0, 2.0])
        assert np.array_equal(sgd_step(w, np.zeros(2), 0.3), w)

    def test_arithmetic(self):
        assert np.allclose(sgd_step([1.0, 1.0], [1.0, -1.0], 0.5), [0.5, 1.5])

    def test_rejects_nonpositive_eta(self):
        with pytest.raises(InvalidInputError):
            sgd_step([1.0], [1.0], 0.0)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            sgd_step([1.0, 2.0], [1.0], 0.1)


class TestRunSgdLsr:
    """Algorithm 1 on synthetic oracles."""

    def setup_method(self):
        self.noisy = SyntheticOracle(make_pl_sine(1, mu=0.1), NoiseSpec(1.0, 0.2, 0.5))

    def test_closed_form_quadratic_iterates(self):
        """w_t - w* = (1 - eta L)^t (w0 - w*) with exact gradients."""
        oracle = SyntheticOracle(make_shifted_quadratic(1, 2.0, [1.0]), NoiseSpec(0.0), w0=[3.0])
        trace = run_sgd_lsr(oracle, SgdConfig(0.1, 30, SmoothingSpec(0.0), seed=0))
        expected = 1.0 + 0.8 ** 30 * 2.0
        assert trace.final_params[0] == pytest.approx(expected, abs=1e-9)
        gaps = 2.0 * 0.8 ** trace.t
        assert np.allclose(trace.objective, gaps ** 2, atol=1e-9)

    def test_zero_iterations(self):
        trace = run_sgd_lsr(self.noisy, SgdConfig(0.1, 0, SmoothingSpec(0.3), seed=1))
        assert trace.num_records == 1
        assert np.array_equal(trace.final_params, self.noisy.w0)

    def test_deterministic_descent_on_pl_sine(self):
        oracle = SyntheticOracle(make_pl_sine(1), NoiseSpec(0.0), w0=[3.0])
        trace = run_sgd_lsr(oracle, SgdConfig(0.125, 200, SmoothingSpec(0.0), seed=0))
        for i in range(trace.num_records - 1):
            if trace.grad_norm_sq[i] < 1e-12:
                break
            assert trace.objective[i + 1] < trace.objective[i]
        assert trace.grad_norm_sq[-1] < 1e-12

    def test_same_seed_bit_identical(self):
        config = SgdConfig(0.05, 300, SmoothingSpec(0.4), seed=12)
        _assert_same_trace(run_sgd_lsr(self.noisy, config), run_sgd_lsr(self.noisy, config))

    def test_batch_matches_single_runs(self):
        smoothing = SmoothingSpec(0.4)
        batch = run_sgd_lsr_batch(self.noisy, 0.05, 300, smoothing, [3, 4, 5])
        for seed, trace in zip([3, 4, 5], batch):
            _assert_same_trace(trace, run_sgd_lsr(self.noisy, SgdConfig(0.05, 300, smoothing, seed)))

    def test_records_at_stride_and_end(self):
        trace = run_sgd_lsr(self.noisy, SgdConfig(0.05, 23, SmoothingSpec(0.4), seed=0), eval_stride=5)
        assert list(trace.t) == [0, 5, 10, 15, 20, 23]
        assert np.all(trace.stage == STAGE_SMOOTHED)

    def test_baseline_records_stage_two(self):
        trace = run_sgd_lsr(self.noisy, SgdConfig(0.05, 10, SmoothingSpec(0.0), seed=0))
        assert np.all(trace.stage == STAGE_ONE_HOT)

    def test_strided_window_uses_exact_sums(self):
        """Synthetic oracles accumulate every iterate, so the stride does not matter."""
        config = SgdConfig(0.05, 100, SmoothingSpec(0.4), seed=2)
        dense = run_sgd_lsr(self.noisy, config, eval_stride=1)
        sparse = run_sgd_lsr(self.noisy, config, eval_stride=10)
        assert window_mean(sparse) == window_mean(dense)
        assert window_mean(dense) == pytest.approx(np.mean(dense.grad_norm_sq[:-1]), rel=1e-12)

    def test_step_decay(self):
        decay = StepDecay(every=10, factor=0.5)
        assert decay.multiplier(9) == 1.0
        assert decay.multiplier(10) == 0.5
        assert decay.multiplier(25) == 0.25

    def test_eta_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            SgdConfig(0.0, 10, SmoothingSpec(0.0))


class TestRunTsla:
    """Algorithm 2 and its reductions."""

    def setup_method(self):
        self.oracle = SyntheticOracle(make_pl_sine(1, mu=0.1), NoiseSpec(1.0, 0.05, 0.5))

    def test_t1_zero_reduces_to_baseline(self):
        schedule = TslaSchedule(0.5, 0.125, 0, 0.01, 200)
        tsla = run_tsla(self.oracle, schedule, seed=4)
        baseline = run_sgd_lsr(self.oracle, SgdConfig(0.01, 200, SmoothingSpec(0.0), seed=4))
        _assert_same_trace(tsla, baseline)

    def test_t2_zero_reduces_to_lsr(self):
        schedule = TslaSchedule.relaxed(0.5, 0.125, 150, 0.01, 0)
        tsla = run_tsla(self.oracle, schedule, seed=4)
        lsr = run_sgd_lsr(self.oracle, SgdConfig(0.125, 150, SmoothingSpec(0.5), seed=4))
        _assert_same_trace(tsla, lsr)

    def test_stage_boundary_continuity(self):
        schedule = TslaSchedule(0.5, 0.125, 40, 0.01, 60)
        tsla = run_tsla(self.oracle, schedule, seed=9, eval_stride=10)
        lsr = run_sgd_lsr(self.oracle, SgdConfig(0.125, 40, SmoothingSpec(0.5), seed=9))
        at_drop = int(np.flatnonzero(tsla.t == 40)[0])
        assert tsla.stage[at_drop] == STAGE_ONE_HOT
        assert tsla.stage[at_drop - 1] == STAGE_SMOOTHED
        assert tsla.objective[at_drop] == pl_sine_value(lsr.final_params)

    def test_second_stage_window(self):
        schedule = TslaSchedule(0.5, 0.125, 40, 0.01, 60)
        trace = run_tsla(self.oracle, schedule, seed=1, eval_stride=1)
        assert trace.window_bounds(WINDOW_SECOND_STAGE) == (40, 100)
        expected = np.mean(trace.grad_norm_sq[40:100])
        assert window_mean(trace, WINDOW_SECOND_STAGE) == pytest.approx(expected, rel=1e-12)

    def test_schedule_validation(self):
        with pytest.raises(InvalidInputError):
            TslaSchedule(0.0, 0.1, 10, 0.1, 10)
        with pytest.raises(InvalidInputError):
            TslaSchedule(0.5, 0.1, 10, 0.1, 0)
        assert TslaSchedule(0.5, 0.1, 10, 0.1, 5).total == 15


class TestStationarityMetric:
    """Random-iterate E_R ||grad F(w_R)||^2."""

    def test_constant_trace(self):
        trace = _manual_trace([2.5] * 6)
        assert random_iterate_stationarity(trace) == 2.5

    def test_average_over_repeats(self):
        a = _manual_trace([1.0, 1.0, 1.0, 9.0])
        b = _manual_trace([3.0, 3.0, 3.0, 9.0])
        b = replace(b, seed=1)
        assert random_iterate_stationarity(a, WINDOW_ALL, [b]) == 2.0

    def test_strided_trace_without_sums_rejected(self):
        trace = RunTrace(
            t=np.array([0, 5, 10]), stage=np.array([2, 2, 2]), objective=np.zeros(3),
            grad_norm_sq=np.ones(3), final_params=np.zeros(1), eval_stride=5,
            stage1_iterations=0, total_iterations=10,
        )
        with pytest.raises(InvalidInputError):
            window_mean(trace)

    def test_empty_second_stage_rejected(self):
        trace = _manual_trace([1.0, 1.0, 1.0], stage1=2)
        with pytest.raises(InvalidInputError):
            window_mean(trace, WINDOW_SECOND_STAGE)

    def test_trace_invariants(self):
        with pytest.raises(InvalidInputError):
            RunTrace(
                t=np.array([0, 0]), stage=np.array([1, 1]), objective=np.zeros(2),
                grad_norm_sq=np.zeros(2), final_params=np.zeros(1), eval_stride=1,
                stage1_iterations=0, total_iterations=1,
            )


class TestClassificationRuns:
    """Loops over a finite dataset with held-out evaluation."""

    def setup_method(self):
        train, test = generate_train_test(3, 2, 30, 15, 3.0, 0.0, seed=0)
        self.oracle = ClassificationOracle(ModelSpec(SOFTMAX_LINEAR, 2, 3), train, test)

    def test_default_stride_is_one_epoch(self):
        trace = run_sgd_lsr(self.oracle, SgdConfig(0.1, 60, SmoothingSpec(0.2), seed=0))
        assert list(trace.t) == [0, 30, 60]
        assert trace.accuracy is not None and trace.accuracy.shape == (3,)
        assert trace.top5_accuracy is None

    def test_training_lowers_objective(self):
        trace = run_sgd_lsr(self.oracle, SgdConfig(0.1, 300, SmoothingSpec(0.0), seed=0))
        assert trace.objective[-1] < trace.objective[0]

    def test_teacher_source_without_labels(self):
        with pytest.raises(ConfigurationError):
            run_sgd_lsr(self.oracle, SgdConfig(0.1, 10, SmoothingSpec(0.2, "teacher"), seed=0))

    def test_stride_one_metric_matches_records(self):
        trace = run_sgd_lsr(self.oracle, SgdConfig(0.1, 20, SmoothingSpec(0.2), seed=3), eval_stride=1)
        assert window_mean(trace) == pytest.approx(np.mean(trace.grad_norm_sq[:-1]), rel=1e-12)
