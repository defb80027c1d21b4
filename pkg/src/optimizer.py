"""Baseline SGD, SGD with label smoothing, and the two-stage TSLA loop.

All three share one replica-batched loop: a batch of seeds advances together
as an (R, p) parameter array and every replica draws from its own random
streams, so a run's trace is the same whether it ran alone or in a block.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import STREAM_BLOCK
from src.errors import InvalidInputError
from src.labels import SOURCE_UNIFORM, LabelDistribution, SmoothingSpec

logger = logging.getLogger("lsr-lab.optimizer")

STAGE_SMOOTHED = 1
STAGE_ONE_HOT = 2

WINDOW_ALL = "all"
WINDOW_SECOND_STAGE = "second_stage"
WINDOWS = (WINDOW_ALL, WINDOW_SECOND_STAGE)


@dataclass(frozen=True)
class SgdConfig:
    """Algorithm 1 settings: constant step size, iteration count, labels, seed."""

    eta: float
    T: int
    smoothing: SmoothingSpec = field(default_factory=lambda: SmoothingSpec(0.0))
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0 or not np.isfinite(self.eta):
            raise InvalidInputError(f"eta must be > 0, got {self.eta}")
        if self.T < 0:
            raise InvalidInputError(f"T must be >= 0, got {self.T}")


@dataclass(frozen=True)
class TslaSchedule:
    """(theta, eta1, T1, eta2, T2) for the two-stage algorithm.

    ``require_stage2=False`` admits T2 = 0, which only reduction checks use.
    """

    theta: float
    eta1: float
    T1: int
    eta2: float
    T2: int
    require_stage2: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise InvalidInputError(f"TSLA theta must lie in (0, 1), got {self.theta}")
        if not self.eta1 > 0 or not self.eta2 > 0:
            raise InvalidInputError(
                f"learning rates must be > 0, got eta1={self.eta1} eta2={self.eta2}"
            )
        if self.T1 < 0:
            raise InvalidInputError(f"T1 must be >= 0, got {self.T1}")
        min_t2 = 1 if self.require_stage2 else 0
        if self.T2 < min_t2:
            raise InvalidInputError(f"T2 must be >= {min_t2}, got {self.T2}")

    @classmethod
    def relaxed(cls, theta: float, eta1: float, T1: int, eta2: float, T2: int) -> "TslaSchedule":
        return cls(theta, eta1, T1, eta2, T2, require_stage2=False)

    @property
    def total(self) -> int:
        return self.T1 + self.T2


@dataclass(frozen=True)
class StepDecay:
    """Multiply the step size by ``factor`` every ``every`` iterations."""

    every: int
    factor: float = 0.1

    def __post_init__(self):
        if self.every < 1:
            raise InvalidInputError(f"decay interval must be >= 1, got {self.every}")
        if not 0.0 < self.factor <= 1.0:
            raise InvalidInputError(f"decay factor must lie in (0, 1], got {self.factor}")

    def multiplier(self, t: int) -> float:
        return self.factor ** (t // self.every)


@dataclass(frozen=True, eq=False)
class RunTrace:
    """Records of one run at t = 0, every multiple of eval_stride, and t = T.

    ``window_sums`` holds the exact sum of ||grad F(w_t)||^2 over each
    averaging window when the gradient was evaluated at every iterate.
    """

    t: np.ndarray
    stage: np.ndarray
    objective: np.ndarray
    grad_norm_sq: np.ndarray
    final_params: np.ndarray
    eval_stride: int
    stage1_iterations: int
    total_iterations: int
    seed: int = 0
    label: str = ""
    accuracy: Optional[np.ndarray] = None
    top5_accuracy: Optional[np.ndarray] = None
    window_sums: Optional[Dict[str, float]] = None

    def __post_init__(self):
        if len(self.t) and np.any(np.diff(self.t) <= 0):
            raise InvalidInputError("trace t values must be strictly increasing")
        if len(self.stage) and np.any(np.diff(self.stage) < 0):
            raise InvalidInputError("trace stages must be non-decreasing")

    @property
    def num_records(self) -> int:
        return int(self.t.shape[0])

    def records(self) -> List[Tuple[int, int, float, float]]:
        return [
            (int(t), int(s), float(f), float(g))
            for t, s, f, g in zip(self.t, self.stage, self.objective, self.grad_norm_sq)
        ]

    def window_bounds(self, window: str) -> Tuple[int, int]:
        """Half-open iteration range [start, stop) the random iterate is drawn from."""
        if window == WINDOW_ALL:
            return 0, self.total_iterations
        if window == WINDOW_SECOND_STAGE:
            return self.stage1_iterations, self.total_iterations
        raise InvalidInputError(f"unknown window '{window}', expected one of {WINDOWS}")

    def final(self, name: str = "grad_norm_sq") -> float:
        values = getattr(self, name)
        if values is None:
            raise InvalidInputError(f"trace has no '{name}' records")
        return float(values[-1])


def sgd_step(w: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    """w - eta * g."""
    w = np.asarray(w, dtype=float)
    g = np.asarray(g, dtype=float)
    if w.shape != g.shape:
        raise InvalidInputError(f"parameter shape {w.shape} does not match gradient {g.shape}")
    if not eta > 0:
        raise InvalidInputError(f"eta must be > 0, got {eta}")
    return w - eta * g


def _stage_number(smoothing: SmoothingSpec) -> int:
    return STAGE_SMOOTHED if smoothing.theta > 0.0 else STAGE_ONE_HOT


class _Recorder:
    """Preallocated (records, R) buffers for a replica batch."""

    def __init__(self, replicas: int, total: int, stride: int, with_eval: Tuple[str, ...]):
        capacity = total // stride + 2
        self.t = np.zeros(capacity, dtype=np.int64)
        self.stage = np.zeros(capacity, dtype=np.int64)
        self.objective = np.zeros((capacity, replicas))
        self.grad_norm_sq = np.zeros((capacity, replicas))
        self.evals = {name: np.zeros((capacity, replicas)) for name in with_eval}
        self.count = 0

    def add(self, t, stage, objective, grad_norm_sq, evals):
        i = self.count
        self.t[i] = t
        self.stage[i] = stage
        self.objective[i] = objective
        self.grad_norm_sq[i] = grad_norm_sq
        for name, values in evals.items():
            self.evals[name][i] = values
        self.count += 1


def _run_batch(
    oracle,
    stages: Sequence[Tuple[SmoothingSpec, float, int]],
    seeds: Sequence[int],
    eval_stride: Optional[int] = None,
    label: str = "",
    lr_schedule: Optional[StepDecay] = None,
) -> List[RunTrace]:
    """Run consecutive constant-step stages for every seed in ``seeds``."""
    if not seeds:
        raise InvalidInputError("need at least one seed")
    stride = oracle.default_eval_stride if eval_stride is None else int(eval_stride)
    if stride < 1:
        raise InvalidInputError(f"eval_stride must be >= 1, got {stride}")
    prepared_stages = []
    for smoothing, eta, steps in stages:
        SgdConfig(eta, steps, smoothing)
        prepared_stages.append(oracle.prepare_stage(smoothing))

    replicas = len(seeds)
    total = sum(steps for _, _, steps in stages)
    stage1 = sum(steps for smoothing, _, steps in stages if smoothing.theta > 0.0)
    second_start = total - sum(
        steps for smoothing, _, steps in stages if smoothing.theta == 0.0
    )
    every_iterate = oracle.exact_gradient_every_step or stride == 1

    params = np.tile(np.asarray(oracle.w0, dtype=float), (replicas, 1))
    sampler = oracle.sampler(seeds)
    eval_names = tuple(oracle.evaluate(params[:1]).keys())
    recorder = _Recorder(replicas, total, stride, eval_names)
    sums_all = np.zeros(replicas)
    sums_second = np.zeros(replicas)

    logger.debug(
        "Batch '%s': %d replicas, %d iterations, stride %d", label, replicas, total, stride
    )

    t = 0
    stage_no = _stage_number(stages[0][0]) if stages else STAGE_ONE_HOT
    for (smoothing, eta, steps), prepared in zip(stages, prepared_stages):
        if steps == 0:
            continue
        stage_no = _stage_number(smoothing)
        done = 0
        while done < steps:
            chunk = min(STREAM_BLOCK, steps - done)
            draws = sampler.draw(chunk)
            for k in range(chunk):
                recording = t % stride == 0
                exact = None
                if every_iterate or recording:
                    exact = oracle.gradient(params)
                    gnorm = np.sum(exact * exact, axis=1)
                    if every_iterate:
                        sums_all += gnorm
                        if t >= second_start:
                            sums_second += gnorm
                    if recording:
                        recorder.add(
                            t, stage_no, oracle.objective(params), gnorm, oracle.evaluate(params)
                        )
                g = oracle.step_gradient(params, exact, draws, k, prepared)
                step_eta = eta if lr_schedule is None else eta * lr_schedule.multiplier(t)
                params = sgd_step(params, g, step_eta)
                t += 1
            done += chunk
        logger.debug("Batch '%s': stage %d done at t=%d", label, stage_no, t)

    final_grad = oracle.gradient(params)
    if not np.all(np.isfinite(params)):
        logger.warning("Batch '%s' diverged: non-finite parameters at t=%d", label, t)
    recorder.add(
        t, stage_no, oracle.objective(params),
        np.sum(final_grad * final_grad, axis=1), oracle.evaluate(params),
    )

    n = recorder.count
    traces = []
    for r, seed in enumerate(seeds):
        evals = {name: values[:n, r].copy() for name, values in recorder.evals.items()}
        traces.append(
            RunTrace(
                t=recorder.t[:n].copy(),
                stage=recorder.stage[:n].copy(),
                objective=recorder.objective[:n, r].copy(),
                grad_norm_sq=recorder.grad_norm_sq[:n, r].copy(),
                final_params=params[r].copy(),
                eval_stride=stride,
                stage1_iterations=stage1,
                total_iterations=total,
                seed=int(seed),
                label=label,
                accuracy=evals.get("accuracy"),
                top5_accuracy=evals.get("top5_accuracy"),
                window_sums=(
                    {WINDOW_ALL: float(sums_all[r]), WINDOW_SECOND_STAGE: float(sums_second[r])}
                    if every_iterate
                    else None
                ),
            )
        )
    return traces


def run_sgd_lsr_batch(
    oracle,
    eta: float,
    T: int,
    smoothing: SmoothingSpec,
    seeds: Sequence[int],
    eval_stride: Optional[int] = None,
    label: str = "",
    lr_schedule: Optional[StepDecay] = None,
) -> List[RunTrace]:
    """Algorithm 1 for a block of seeds; theta = 0 is the baseline."""
    return _run_batch(oracle, [(smoothing, eta, T)], seeds, eval_stride, label, lr_schedule)


def run_sgd_lsr(
    oracle,
    config: SgdConfig,
    eval_stride: Optional[int] = None,
    label: str = "",
    lr_schedule: Optional[StepDecay] = None,
) -> RunTrace:
    """T iterations of w <- w - eta * grad loss(y^LS, f(w; x)) for one seed."""
    return run_sgd_lsr_batch(
        oracle, config.eta, config.T, config.smoothing, [config.seed],
        eval_stride, label, lr_schedule,
    )[0]


def tsla_stages(
    schedule: TslaSchedule,
    source: str = SOURCE_UNIFORM,
    fixed: Optional[LabelDistribution] = None,
) -> List[Tuple[SmoothingSpec, float, int]]:
    """Smoothed stage at eta1 for T1 steps, then one-hot at eta2 for T2 steps."""
    return [
        (SmoothingSpec(schedule.theta, source, fixed), schedule.eta1, schedule.T1),
        (SmoothingSpec(0.0, source, fixed), schedule.eta2, schedule.T2),
    ]


def run_tsla_batch(
    oracle,
    schedule: TslaSchedule,
    seeds: Sequence[int],
    source: str = SOURCE_UNIFORM,
    fixed: Optional[LabelDistribution] = None,
    eval_stride: Optional[int] = None,
    label: str = "",
    lr_schedule: Optional[StepDecay] = None,
) -> List[RunTrace]:
    return _run_batch(
        oracle, tsla_stages(schedule, source, fixed), seeds, eval_stride, label, lr_schedule
    )


def run_tsla(
    oracle,
    schedule: TslaSchedule,
    seed: int,
    source: str = SOURCE_UNIFORM,
    fixed: Optional[LabelDistribution] = None,
    eval_stride: Optional[int] = None,
    label: str = "",
    lr_schedule: Optional[StepDecay] = None,
) -> RunTrace:
    """Algorithm 2: stage 2 warm-starts from the last stage-1 iterate."""
    return run_tsla_batch(
        oracle, schedule, [seed], source, fixed, eval_stride, label, lr_schedule
    )[0]


def window_mean(trace: RunTrace, window: str = WINDOW_ALL) -> float:
    """Mean of ||grad F(w_t)||^2 over one trace's window."""
    start, stop = trace.window_bounds(window)
    if stop <= start:
        raise InvalidInputError(
            f"window '{window}' is empty for run '{trace.label}' seed={trace.seed}"
        )
    if trace.window_sums is not None:
        return trace.window_sums[window] / (stop - start)
    if trace.eval_stride != 1:
        raise InvalidInputError(
            f"window '{window}' of run '{trace.label}' seed={trace.seed} was recorded "
            f"every {trace.eval_stride} iterations; the random-iterate metric needs all of them"
        )
    mask = (trace.t >= start) & (trace.t < stop)
    return float(np.mean(trace.grad_norm_sq[mask]))


def stationarity_values(traces: Sequence[RunTrace], window: str = WINDOW_ALL) -> np.ndarray:
    """Per-run window means, ordered by seed."""
    ordered = sorted(traces, key=lambda tr: tr.seed)
    return np.array([window_mean(tr, window) for tr in ordered])


def random_iterate_stationarity(
    trace: RunTrace,
    window: str = WINDOW_ALL,
    repeats: Sequence[RunTrace] = (),
) -> float:
    """Monte-Carlo E_R ||grad F(w_R)||^2 with R uniform over the window.

    Every run contributes its window mean with equal weight.
    """
    values = stationarity_values([trace, *repeats], window)
    return float(np.mean(values))
