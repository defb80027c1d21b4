"""CSV files: run traces, per-run finals, summary tables, plot series, datasets.

Reals are written with 17 significant digits so reading a file back yields
the exact float64 values that were written.
"""

import csv
import logging
import math
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config.settings import FLOAT_FORMAT
from src.classification import Dataset
from src.errors import InvalidInputError
from src.optimizer import RunTrace

logger = logging.getLogger("lsr-lab.csv_builder")

TRACE_HEADERS = ["t", "stage", "objective", "grad_norm_sq"]
OPTIONAL_TRACE_COLUMNS = ["accuracy", "top5_accuracy"]

RUN_HEADERS = [
    "label",
    "sweep_index",
    "sweep_value",
    "seed",
    "iterations",
    "final_objective",
    "final_grad_norm_sq",
    "final_accuracy",
    "final_top5_accuracy",
    "stationarity",
    "stationarity_window",
]

SUMMARY_METRICS = [
    "final_objective",
    "final_grad_norm_sq",
    "final_accuracy",
    "final_top5_accuracy",
    "stationarity",
]
SUMMARY_HEADERS = (
    ["label", "sweep_index", "repeats"]
    + [f"{m}_{stat}" for m in SUMMARY_METRICS for stat in ("mean", "std")]
    + ["stationarity_se"]
)


def format_real(value: Optional[float]) -> str:
    """17-significant-digit text; empty for missing values."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return FLOAT_FORMAT % value


def parse_real(text: str) -> float:
    return float(text) if text != "" else math.nan


class CSVBuilder:
    """Builds and reads the CSV files of an experiment directory."""

    def trace_rows(self, trace: RunTrace) -> List[List[str]]:
        optional = [c for c in OPTIONAL_TRACE_COLUMNS if getattr(trace, c) is not None]
        rows = [TRACE_HEADERS + optional]
        for i in range(trace.num_records):
            row = [
                str(int(trace.t[i])),
                str(int(trace.stage[i])),
                format_real(trace.objective[i]),
                format_real(trace.grad_norm_sq[i]),
            ]
            row.extend(format_real(getattr(trace, c)[i]) for c in optional)
            rows.append(row)
        return rows

    def run_rows(self, runs: Sequence[Dict[str, Any]]) -> List[List[str]]:
        rows = [RUN_HEADERS]
        for run in runs:
            rows.append([
                run["label"],
                str(run["sweep_index"]),
                format_real(run["sweep_value"]),
                str(run["seed"]),
                str(run["iterations"]),
                format_real(run["final_objective"]),
                format_real(run["final_grad_norm_sq"]),
                format_real(run["final_accuracy"]),
                format_real(run["final_top5_accuracy"]),
                format_real(run["stationarity"]),
                run["stationarity_window"],
            ])
        return rows

    def summary_rows(self, summaries: Sequence[Any]) -> List[List[str]]:
        rows = [SUMMARY_HEADERS]
        for s in summaries:
            row = [s.label, str(s.sweep_index), str(s.repeats)]
            for metric in SUMMARY_METRICS:
                row.append(format_real(s.means.get(metric)))
                row.append(format_real(s.stds.get(metric)))
            row.append(format_real(s.stationarity_se))
            rows.append(row)
        return rows

    def plot_rows(
        self, t: np.ndarray, series: Dict[str, np.ndarray]
    ) -> List[List[str]]:
        """Mean-over-repeats series against t, one column per quantity."""
        names = list(series)
        rows = [["t"] + names]
        for i in range(len(t)):
            rows.append([str(int(t[i]))] + [format_real(series[n][i]) for n in names])
        return rows

    def save_csv(self, rows: List[List[str]], path: str) -> str:
        """Write rows to ``path``, creating parent directories."""
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerows(rows)
        logger.debug("Saved CSV to %s (%d data rows)", path, len(rows) - 1)
        return path

    def read_csv(self, path: str) -> List[Dict[str, str]]:
        with open(path, newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))

    def read_trace(self, path: str) -> Dict[str, np.ndarray]:
        """Trace columns as arrays; t and stage are integers."""
        records = self.read_csv(path)
        if not records:
            raise InvalidInputError(f"trace file {path} has no records")
        out = {}
        for column in records[0]:
            values = [r[column] for r in records]
            if column in ("t", "stage"):
                out[column] = np.array([int(v) for v in values], dtype=np.int64)
            else:
                out[column] = np.array([parse_real(v) for v in values])
        return out


# --- Dataset files ---


def dataset_header(num_features: int, num_classes: int, with_teacher: bool) -> List[str]:
    header = [f"x{j}" for j in range(num_features)] + [f"label:{num_classes}"]
    if with_teacher:
        header += [f"t{k}" for k in range(num_classes)]
    return header


def save_dataset(data: Dataset, path: str) -> str:
    """One example per line: d features, the label, then K teacher probabilities if present."""
    with_teacher = data.teacher_labels is not None
    rows = [dataset_header(data.num_features, data.num_classes, with_teacher)]
    for i in range(data.num_examples):
        row = [FLOAT_FORMAT % v for v in data.features[i]]
        row.append(str(int(data.labels[i])))
        if with_teacher:
            row.extend(FLOAT_FORMAT % v for v in data.teacher_labels[i])
        rows.append(row)
    CSVBuilder().save_csv(rows, path)
    logger.info(
        "Saved dataset to %s (n=%d d=%d K=%d teacher=%s)",
        path, data.num_examples, data.num_features, data.num_classes, with_teacher,
    )
    return path


def load_dataset(path: str) -> Dataset:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise InvalidInputError(f"dataset file {path} has no examples")
    header = rows[0]
    label_cols = [i for i, name in enumerate(header) if name.startswith("label:")]
    if len(label_cols) != 1:
        raise InvalidInputError(f"dataset file {path} needs exactly one 'label:K' column")
    d = label_cols[0]
    try:
        k = int(header[d].split(":", 1)[1])
    except ValueError:
        raise InvalidInputError(f"bad label column '{header[d]}' in {path}")
    with_teacher = len(header) == d + 1 + k
    if header != dataset_header(d, k, with_teacher):
        raise InvalidInputError(f"unexpected dataset header in {path}: {header}")

    body = rows[1:]
    for number, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InvalidInputError(f"{path} line {number}: expected {len(header)} fields")
    features = np.array([[float(v) for v in row[:d]] for row in body]).reshape(len(body), d)
    labels = np.array([int(row[d]) for row in body], dtype=np.int64)
    teacher = None
    if with_teacher:
        teacher = np.array([[float(v) for v in row[d + 1 :]] for row in body])
    return Dataset(features, labels, k, teacher)
