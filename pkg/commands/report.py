"""Handler for `report <dir>`: rebuild the comparison table from a result directory.

Steps:
1. Read runs.csv and summary.csv
2. Recompute the summaries from the per-run rows and cross-check them
3. Cross-check every trace file's final record against runs.csv
4. Print the comparison table
"""

import logging
import math
import os
import sys
from typing import Any, Dict, List

from commands import failure_exit_code
from src.csv_builder import SUMMARY_METRICS, CSVBuilder, parse_real
from src.errors import VERIFICATION_FAILED_EXIT, InvalidInputError
from src.experiment_config import slugify
from src.reporter import compare_report
from src.runner import summarize

logger = logging.getLogger("lsr-lab.commands.report")

MATCH_TOLERANCE = 1e-12

_RUN_REALS = ("sweep_value",) + tuple(SUMMARY_METRICS)


def _close(a: float, b: float) -> bool:
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return abs(a - b) <= MATCH_TOLERANCE * max(1.0, abs(a), abs(b))


def read_runs(path: str) -> List[Dict[str, Any]]:
    runs = []
    for record in CSVBuilder().read_csv(path):
        run: Dict[str, Any] = dict(record)
        run["sweep_index"] = int(record["sweep_index"])
        run["seed"] = int(record["seed"])
        run["iterations"] = int(record["iterations"])
        for key in _RUN_REALS:
            run[key] = parse_real(record[key])
        runs.append(run)
    return runs


def summary_mismatches(runs, stored: List[Dict[str, str]]) -> List[str]:
    """Labels and metrics whose stored mean differs from the recomputed one."""
    recomputed = {s.label: s for s in summarize(runs)}
    problems = []
    if set(recomputed) != {row["label"] for row in stored}:
        problems.append("summary.csv and runs.csv name different labels")
    for row in stored:
        summary = recomputed.get(row["label"])
        if summary is None:
            continue
        for metric in SUMMARY_METRICS:
            stored_mean = parse_real(row[f"{metric}_mean"])
            if not _close(stored_mean, summary.means[metric]):
                problems.append(
                    f"{row['label']} {metric}: stored {stored_mean!r} vs recomputed "
                    f"{summary.means[metric]!r}"
                )
    return problems


def trace_mismatches(result_dir: str, runs) -> List[str]:
    builder = CSVBuilder()
    problems = []
    for run in runs:
        path = os.path.join(
            result_dir, "traces", f"{slugify(run['label'])}__seed{run['seed']}.csv"
        )
        if not os.path.exists(path):
            problems.append(f"missing trace {path}")
            continue
        trace = builder.read_trace(path)
        if not _close(float(trace["grad_norm_sq"][-1]), run["final_grad_norm_sq"]):
            problems.append(f"{path}: final grad_norm_sq differs from runs.csv")
    return problems


def handle(result_dir: str) -> int:
    logger.info("Report started: %s", result_dir)
    try:
        logger.info("Step 1: Reading runs.csv and summary.csv")
        runs_path = os.path.join(result_dir, "runs.csv")
        summary_path = os.path.join(result_dir, "summary.csv")
        for path in (runs_path, summary_path):
            if not os.path.exists(path):
                raise InvalidInputError(f"{path} not found; is {result_dir} a result directory?")
        runs = read_runs(runs_path)
        stored = CSVBuilder().read_csv(summary_path)

        logger.info("Step 2: Cross-checking summaries against %d runs", len(runs))
        problems = summary_mismatches(runs, stored)

        logger.info("Step 3: Cross-checking trace files")
        problems += trace_mismatches(result_dir, runs)

        logger.info("Step 4: Building the comparison table")
        sys.stdout.write(compare_report(summarize(runs), title=os.path.basename(result_dir.rstrip("/"))))

        if problems:
            for problem in problems:
                logger.error("Mismatch: %s", problem)
            return VERIFICATION_FAILED_EXIT
        return 0
    except Exception as e:
        return failure_exit_code("Report", e)
