"""Tests for the plain-text comparison report."""

import math
import os
import sys

# Add project root to path
sys.path.insert(
    0, os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
)

from src.reporter import compare_report
from src.runner import SummaryRow
from src.verifier import BoundCheck

NAN = math.nan


def summary(label, stationarity, accuracy=NAN, top5=NAN):
    means = {
        "final_objective": 1.0,
        "final_grad_norm_sq": 0.5,
        "final_accuracy": accuracy,
        "final_top5_accuracy": top5,
        "stationarity": stationarity,
    }
    stds = {key: (0.0 if not math.isnan(v) else NAN) for key, v in means.items()}
    return SummaryRow(label, 0, 3, means, stds)


class TestCompareReport:
    def test_synthetic_table_drops_accuracy_columns(self):
        text = compare_report([summary("baseline", 0.25), summary("LSR", 0.125)])
        header = text.splitlines()[0]
        assert header.split()[:2] == ["algorithm", "repeats"]
        assert "top-1 acc" not in header
        assert "top-5 acc" not in header
        assert "E_R |grad F|^2" in header

    def test_rows_in_summary_order(self):
        text = compare_report([summary("TSLA(20)", 0.01), summary("LSR", 0.1)])
        lines = text.splitlines()
        assert lines[1].startswith("---")
        assert lines[2].startswith("TSLA(20)")
        assert lines[3].startswith("LSR")
        assert "0.01 ± 0" in lines[2]

    def test_title_and_accuracy_column(self):
        text = compare_report([summary("LSR", 0.1, accuracy=0.75)], title="protocol")
        lines = text.splitlines()
        assert lines[0] == "== protocol =="
        assert "top-1 acc" in lines[2]
        assert "top-5 acc" not in lines[2]

    def test_missing_metric_cell(self):
        text = compare_report([summary("LSR", 0.1, accuracy=0.75), summary("baseline", NAN, accuracy=0.5)])
        baseline_line = next(line for line in text.splitlines() if line.startswith("baseline"))
        assert " - " in baseline_line

    def test_check_lines(self):
        checks = [
            BoundCheck("theorem1", "LSR", 0.005, 0.01, True),
            BoundCheck("epsilon_sq_plus_3se", "LSR", 0.02, 0.01, False),
        ]
        text = compare_report([summary("LSR", 0.005)], checks)
        assert "Bound checks:" in text
        assert "  [PASS] LSR theorem1: measured 0.005 <= 0.01" in text
        assert "[FAIL] LSR epsilon_sq_plus_3se" in text
        assert text.endswith("1 of 2 checks FAILED\n")

    def test_all_checks_passed(self):
        checks = [BoundCheck("theorem1", "LSR", 0.005, 0.01, True)]
        assert compare_report([summary("LSR", 0.005)], checks).endswith("All 1 checks passed\n")
