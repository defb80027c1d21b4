"""Experiment execution: build the oracle, run every plan row for every seed,
aggregate, and write the result directory.

Output layout under the config's output directory:

    config.resolved.json        every default made explicit
    traces/<label>__seed<k>.csv one per run
    runs.csv                    per-run finals and stationarity
    summary.csv                 mean/std over repeats per label
    plot_data/<label>.csv       mean-over-repeats series
    report.txt                  comparison table (and bound checks)

No file carries a timestamp, so re-running a config reproduces every byte.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config.settings import get_worker_count
from src.classification import (
    ClassificationOracle,
    ModelSpec,
    attach_teacher_labels,
    fit_full_batch,
    generate_gaussian_mixture,
    generate_train_test,
    init_model,
    split_dataset,
)
from src.csv_builder import SUMMARY_METRICS, CSVBuilder, load_dataset
from src.errors import InvalidInputError, LabError, RunFailedError
from src.estimators import ProblemConstants, estimate_constants
from src.experiment_config import (
    ClassificationOracleConfig,
    ExperimentConfig,
    RunSpec,
    dump_config,
    run_plan,
)
from src.optimizer import RunTrace, run_sgd_lsr_batch, run_tsla_batch, window_mean
from src.reporter import compare_report
from src.synthetic import NoiseSpec, SyntheticOracle, make_pl_sine, make_shifted_quadratic
from utils.parallel_helpers import run_ordered
from utils.rng_helpers import run_seed

logger = logging.getLogger("lsr-lab.runner")


@dataclass(frozen=True)
class SummaryRow:
    """Mean and standard deviation over repeats for one algorithm label."""

    label: str
    sweep_index: int
    repeats: int
    means: Dict[str, float]
    stds: Dict[str, float]
    stationarity_se: float = math.nan
    window: str = "all"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    plan: List[RunSpec]
    traces: Dict[str, List[RunTrace]]
    runs: List[Dict[str, Any]]
    summaries: List[SummaryRow]
    constants: Optional[ProblemConstants] = None
    epoch_length: int = 1
    output_dir: Optional[str] = None
    files: List[str] = field(default_factory=list)


# --- Oracle construction ---


def build_oracle(config: ExperimentConfig):
    """Synthetic or classification oracle described by the config."""
    oc = config.oracle
    if not isinstance(oc, ClassificationOracleConfig):
        if oc.objective == "pl_sine":
            problem = make_pl_sine(oc.dim, oc.mu)
        else:
            problem = make_shifted_quadratic(oc.dim, oc.curvature, oc.w_star)
        noise = NoiseSpec(oc.sigma2, oc.delta, oc.bias_fraction)
        return SyntheticOracle(problem, noise, oc.w0)

    ds = oc.dataset
    test = None
    if ds.path:
        train = load_dataset(ds.path)
        if ds.n_test > 0:
            train, test = split_dataset(train, ds.n_test / train.num_examples, ds.seed)
    elif ds.n_test > 0:
        train, test = generate_train_test(
            ds.num_classes, ds.num_features, ds.n, ds.n_test,
            ds.class_separation, ds.label_noise_rate, ds.seed,
        )
    else:
        train = generate_gaussian_mixture(
            ds.num_classes, ds.num_features, ds.n,
            ds.class_separation, ds.label_noise_rate, ds.seed,
        )

    start = init_model(
        oc.model, train.num_features, train.num_classes, oc.hidden, oc.init_scale, oc.init_seed
    )
    if oc.teacher is not None:
        teacher = fit_full_batch(start, train, oc.teacher.eta, oc.teacher.steps)
        train = attach_teacher_labels(train, teacher, oc.teacher.temperature)
        logger.info("Attached teacher labels (%d full-batch steps)", oc.teacher.steps)
    spec = ModelSpec(oc.model, train.num_features, train.num_classes, oc.hidden)
    return ClassificationOracle(spec, train, test, start.params, oc.batch_size)


def epoch_length(oracle) -> int:
    """Iterations per epoch: n / batch for datasets, 1 for synthetic problems."""
    if isinstance(oracle, ClassificationOracle):
        return max(1, oracle.num_examples // oracle.batch_size)
    return 1


# --- Execution ---


def _run_block(task) -> List[RunTrace]:
    """Run one plan row for one block of seeds (a pool task)."""
    oracle, spec, seeds, eval_stride = task
    try:
        if spec.algorithm == "tsla":
            return run_tsla_batch(
                oracle, spec.schedule, seeds, spec.smoothing.source, spec.smoothing.fixed,
                eval_stride, spec.label, spec.lr_schedule,
            )
        return run_sgd_lsr_batch(
            oracle, spec.eta, spec.T, spec.smoothing, seeds, eval_stride, spec.label,
            spec.lr_schedule,
        )
    except (LabError, ArithmeticError, ValueError) as e:
        raise RunFailedError(spec.label, seeds[0], e)


def _blocks(seeds: Sequence[int], size: int) -> List[List[int]]:
    return [list(seeds[i : i + size]) for i in range(0, len(seeds), size)]


def _stationarity(trace: RunTrace, window: str) -> float:
    try:
        return window_mean(trace, window)
    except InvalidInputError:
        return math.nan


def _final_or_nan(trace: RunTrace, name: str) -> float:
    values = getattr(trace, name)
    return math.nan if values is None else float(values[-1])


def run_rows(plan: Sequence[RunSpec], traces: Dict[str, List[RunTrace]]) -> List[Dict[str, Any]]:
    runs = []
    for spec in plan:
        for trace in sorted(traces[spec.label], key=lambda tr: tr.seed):
            runs.append({
                "label": spec.label,
                "sweep_index": spec.sweep_index,
                "sweep_value": spec.sweep_value,
                "seed": trace.seed,
                "iterations": trace.total_iterations,
                "final_objective": trace.final("objective"),
                "final_grad_norm_sq": trace.final("grad_norm_sq"),
                "final_accuracy": _final_or_nan(trace, "accuracy"),
                "final_top5_accuracy": _final_or_nan(trace, "top5_accuracy"),
                "stationarity": _stationarity(trace, spec.window),
                "stationarity_window": spec.window,
            })
    return runs


def summarize(runs: Sequence[Dict[str, Any]]) -> List[SummaryRow]:
    """Mean and sample standard deviation (ddof=1) per label, in run order."""
    labels: List[str] = []
    grouped: Dict[str, List[Dict[str, Any]]] = {}
    for run in runs:
        if run["label"] not in grouped:
            labels.append(run["label"])
            grouped[run["label"]] = []
        grouped[run["label"]].append(run)

    summaries = []
    for label in labels:
        group = sorted(grouped[label], key=lambda r: r["seed"])
        means, stds = {}, {}
        for metric in SUMMARY_METRICS:
            values = np.array([float(r[metric]) for r in group])
            if np.any(np.isnan(values)):
                means[metric] = stds[metric] = math.nan
                continue
            means[metric] = float(np.mean(values))
            stds[metric] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        se = stds["stationarity"] / math.sqrt(len(group)) if len(group) > 1 else 0.0
        summaries.append(
            SummaryRow(
                label=label,
                sweep_index=int(group[0]["sweep_index"]),
                repeats=len(group),
                means=means,
                stds=stds,
                stationarity_se=se,
                window=group[0]["stationarity_window"],
            )
        )
    return summaries


def plot_series(traces: Sequence[RunTrace]) -> Dict[str, np.ndarray]:
    """Mean over repeats of every recorded quantity."""
    ordered = sorted(traces, key=lambda tr: tr.seed)
    series = {
        "objective": np.mean([tr.objective for tr in ordered], axis=0),
        "grad_norm_sq": np.mean([tr.grad_norm_sq for tr in ordered], axis=0),
    }
    for name in ("accuracy", "top5_accuracy"):
        if getattr(ordered[0], name) is not None:
            series[name] = np.mean([getattr(tr, name) for tr in ordered], axis=0)
    return series


def run_experiment(
    config: ExperimentConfig,
    include_sweep: bool = True,
    workers: Optional[int] = None,
    output_dir: Optional[str] = None,
    constants: Optional[ProblemConstants] = None,
    write: bool = True,
    oracle=None,
) -> ExperimentResult:
    """Execute repeats x plan rows and write the result directory."""
    if oracle is None:
        oracle = build_oracle(config)
    if constants is None and config.needs_constants:
        constants = estimate_constants(oracle)
    epochs = epoch_length(oracle)
    plan = run_plan(config, constants, epochs, include_sweep)
    seeds = [run_seed(config.base_seed, 0, r) for r in range(config.repeats)]

    tasks = []
    for spec in plan:
        for block in _blocks(seeds, config.replica_block):
            tasks.append((oracle, spec, block, config.eval_stride))
    logger.info(
        "Experiment '%s': %d plan rows x %d repeats in %d blocks",
        config.name, len(plan), config.repeats, len(tasks),
    )

    worker_count = get_worker_count(config.workers if workers is None else workers)
    results = run_ordered(_run_block, tasks, worker_count, description="run block")

    traces: Dict[str, List[RunTrace]] = {spec.label: [] for spec in plan}
    for (_, spec, _, _), block_traces in zip(tasks, results):
        traces[spec.label].extend(block_traces)

    runs = run_rows(plan, traces)
    summaries = summarize(runs)
    result = ExperimentResult(
        config=config,
        plan=plan,
        traces=traces,
        runs=runs,
        summaries=summaries,
        constants=constants,
        epoch_length=epochs,
    )
    if write:
        write_results(result, output_dir or config.resolved_output_dir)
    return result


def write_results(result: ExperimentResult, output_dir: str, checks: Sequence = ()) -> List[str]:
    """Write every output file; returns the paths written."""
    builder = CSVBuilder()
    files = []
    os.makedirs(output_dir, exist_ok=True)

    path = os.path.join(output_dir, "config.resolved.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(result.config))
    files.append(path)

    for spec in result.plan:
        ordered = sorted(result.traces[spec.label], key=lambda tr: tr.seed)
        for trace in ordered:
            path = os.path.join(output_dir, "traces", f"{spec.slug}__seed{trace.seed}.csv")
            files.append(builder.save_csv(builder.trace_rows(trace), path))
        path = os.path.join(output_dir, "plot_data", f"{spec.slug}.csv")
        files.append(builder.save_csv(builder.plot_rows(ordered[0].t, plot_series(ordered)), path))

    files.append(builder.save_csv(builder.run_rows(result.runs), os.path.join(output_dir, "runs.csv")))
    files.append(
        builder.save_csv(builder.summary_rows(result.summaries), os.path.join(output_dir, "summary.csv"))
    )

    path = os.path.join(output_dir, "report.txt")
    with open(path, "w", encoding="utf-8") as f:
        f.write(compare_report(result.summaries, checks, title=result.config.name))
    files.append(path)

    result.output_dir = output_dir
    result.files = files
    logger.info("Wrote %d files to %s", len(files), output_dir)
    return files
