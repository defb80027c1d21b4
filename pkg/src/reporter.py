"""Plain-text comparison reports: algorithms x metrics, then bound checks."""

import logging
import math
from typing import Optional, Sequence

logger = logging.getLogger("lsr-lab.reporter")

REPORT_METRICS = [
    ("final_objective", "final F"),
    ("final_grad_norm_sq", "final |grad F|^2"),
    ("stationarity", "E_R |grad F|^2"),
    ("final_accuracy", "top-1 acc"),
    ("final_top5_accuracy", "top-5 acc"),
]


def _cell(mean: Optional[float], std: Optional[float]) -> str:
    if mean is None or math.isnan(mean):
        return "-"
    if std is None or math.isnan(std):
        return f"{mean:.6g}"
    return f"{mean:.6g} ± {std:.3g}"


def compare_report(summaries: Sequence, checks: Sequence = (), title: str = "") -> str:
    """Summary table with one row per algorithm label, plus PASS/FAIL lines.

    Metric columns nobody reported (accuracy on synthetic oracles, top-5
    with K <= 10) are left out.
    """
    columns = [
        (key, name)
        for key, name in REPORT_METRICS
        if any(not math.isnan(s.means.get(key, math.nan)) for s in summaries)
    ]
    header = ["algorithm", "repeats"] + [name for _, name in columns]
    rows = [header]
    for s in summaries:
        rows.append(
            [s.label, str(s.repeats)]
            + [_cell(s.means.get(key), s.stds.get(key)) for key, _ in columns]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]

    lines = []
    if title:
        lines += [f"== {title} ==", ""]
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))

    if checks:
        lines += ["", "Bound checks:"]
        lines += [f"  {check.describe()}" for check in checks]
        failed = sum(1 for check in checks if not check.passed)
        if failed:
            lines.append(f"{failed} of {len(checks)} checks FAILED")
        else:
            lines.append(f"All {len(checks)} checks passed")
    return "\n".join(lines) + "\n"
