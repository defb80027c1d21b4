"""Bound verification - checks measured stationarity against the convergence theory."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.errors import PreconditionError
from src.estimators import (
    REGIME_CONVERGES,
    ProblemConstants,
    classify_regime,
    theorem1_bound,
    theorem2_bound,
    theorem3_bound,
)
from src.experiment_config import RunSpec
from src.optimizer import RunTrace, stationarity_values

logger = logging.getLogger("lsr-lab.verifier")

# Standard errors of slack granted to Monte-Carlo comparisons against epsilon^2
SE_MULTIPLIER = 3.0


@dataclass(frozen=True)
class BoundCheck:
    """One measured-vs-bound comparison with a pass/fail outcome."""

    name: str
    label: str
    measured: float
    bound: float
    passed: bool
    standard_error: float = 0.0
    relation: str = "<="

    def describe(self) -> str:
        marker = "PASS" if self.passed else "FAIL"
        se = f" (se {self.standard_error:.3g})" if self.standard_error else ""
        return (
            f"[{marker}] {self.label} {self.name}: measured {self.measured:.6g}{se} "
            f"{self.relation} {self.bound:.6g}"
        )


def mean_and_se(values: np.ndarray) -> tuple:
    """Mean and standard error over repeats; se is 0 for a single run."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return math.nan, math.nan
    if values.size == 1:
        return float(values[0]), 0.0
    return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(values.size))


def _at_most(name, label, measured, bound, se=0.0) -> BoundCheck:
    return BoundCheck(name, label, measured, bound, measured <= bound, se)


def _epsilon_check(label, measured, se, epsilon) -> BoundCheck:
    limit = epsilon ** 2 + SE_MULTIPLIER * se
    return BoundCheck("epsilon_sq_plus_3se", label, measured, limit, measured <= limit, se)


def bound_checks(
    plan: Sequence[RunSpec],
    traces: Dict[str, List[RunTrace]],
    constants: ProblemConstants,
    epsilon: Optional[float] = None,
) -> List[BoundCheck]:
    """Applicable bounds per run spec: the one-hot bound for baseline rows,
    the smoothed bound and regime checks for LSR rows, and the stage-2 bound
    for TSLA rows."""
    c = constants
    checks: List[BoundCheck] = []
    for spec in plan:
        if spec.lr_schedule is not None:
            logger.info("Skipping bounds for '%s': step decay is outside the theory", spec.label)
            continue
        measured, se = mean_and_se(stationarity_values(traces[spec.label], spec.window))
        theta = spec.smoothing.theta if spec.smoothing is not None else 0.0

        if spec.algorithm == "tsla":
            s = spec.schedule
            bound = theorem2_bound(c.delta, c.sigma2, c.mu, s.eta2, s.T2, c.L)
            checks.append(_at_most("theorem2_stage2", spec.label, measured, bound, se))
            if epsilon is not None:
                checks.append(_epsilon_check(spec.label, measured, se, epsilon))
            continue

        if theta == 0.0:
            try:
                bound = theorem3_bound(c.f_at_w0, spec.eta, spec.T, c.L, c.sigma2)
                checks.append(_at_most("theorem3", spec.label, measured, bound, se))
            except PreconditionError as e:
                logger.info("No one-hot bound for '%s': %s", spec.label, e)
            if epsilon is not None:
                checks.append(_epsilon_check(spec.label, measured, se, epsilon))
            continue

        bound = theorem1_bound(c.f_at_w0, spec.eta, spec.T, c.delta, c.sigma2)
        checks.append(_at_most("theorem1", spec.label, measured, bound, se))
        if epsilon is None or c.sigma2 == 0.0:
            continue
        regime = classify_regime(c.delta, epsilon, c.sigma2)
        if regime.name == REGIME_CONVERGES:
            checks.append(_epsilon_check(spec.label, measured, se, epsilon))
        else:
            checks.append(_at_most("lsr_floor", spec.label, measured, regime.floor, se))
            checks.append(
                BoundCheck(
                    "above_epsilon_sq", spec.label, measured, epsilon ** 2,
                    measured > epsilon ** 2, se, ">",
                )
            )
    for check in checks:
        logger.info(check.describe())
    return checks


def _final_mean(traces: Sequence[RunTrace], name: str) -> float:
    return float(np.mean([tr.final(name) for tr in sorted(traces, key=lambda tr: tr.seed)]))


def _by_kind(plan: Sequence[RunSpec]) -> Dict[str, List[RunSpec]]:
    out: Dict[str, List[RunSpec]] = {"tsla": [], "lsr": [], "baseline": []}
    for spec in plan:
        kind = spec.algorithm
        if kind == "lsr" and spec.smoothing is not None and spec.smoothing.theta == 0.0:
            kind = "baseline"
        out[kind].append(spec)
    return out


def ordering_checks(
    plan: Sequence[RunSpec],
    traces: Dict[str, List[RunTrace]],
    delta: float,
    metric: str = "grad_norm_sq",
) -> List[BoundCheck]:
    """Matched-budget ordering of mean final grad_norm_sq.

    With delta < 1 the best TSLA row must not lose to LSR or the baseline;
    with delta >= 1 the baseline must not lose to LSR.
    """
    groups = _by_kind(plan)
    best = {
        kind: min(_final_mean(traces[s.label], metric) for s in specs)
        for kind, specs in groups.items()
        if specs
    }
    checks = []
    if delta < 1.0 and "tsla" in best:
        for other in ("lsr", "baseline"):
            if other in best:
                checks.append(_at_most(f"ordering_vs_{other}", "TSLA", best["tsla"], best[other]))
    elif delta >= 1.0 and "baseline" in best and "lsr" in best:
        checks.append(_at_most("ordering_vs_lsr", "baseline", best["baseline"], best["lsr"]))
    for check in checks:
        logger.info(check.describe())
    return checks


def _window_accuracy(traces: Sequence[RunTrace], low: int, high: int, after: bool) -> float:
    values = []
    for tr in traces:
        if after:
            mask = (tr.t > low) & (tr.t <= high)
        else:
            mask = (tr.t >= low) & (tr.t < high)
        values.append(tr.accuracy[mask])
    joined = np.concatenate(values)
    return float(np.mean(joined)) if joined.size else math.nan


def drop_accuracy_checks(
    plan: Sequence[RunSpec],
    traces: Dict[str, List[RunTrace]],
    epoch_length: int,
) -> List[BoundCheck]:
    """Held-out accuracy right after each drop point against right before it,
    and the best TSLA row's final accuracy against LSR and the baseline."""
    checks = []
    groups = _by_kind(plan)
    for spec in groups["tsla"]:
        runs = traces[spec.label]
        if runs[0].accuracy is None:
            logger.warning("No accuracy records for '%s'; skipping drop checks", spec.label)
            return []
        drop = spec.schedule.T1
        before = _window_accuracy(runs, drop - epoch_length, drop, after=False)
        after = _window_accuracy(runs, drop, drop + epoch_length, after=True)
        checks.append(
            BoundCheck("accuracy_after_drop", spec.label, after, before, after > before, 0.0, ">")
        )
    best = {
        kind: max(_final_mean(traces[s.label], "accuracy") for s in specs)
        for kind, specs in groups.items()
        if specs
    }
    if "tsla" in best:
        for other in ("lsr", "baseline"):
            if other in best:
                checks.append(
                    BoundCheck(
                        f"accuracy_vs_{other}", "TSLA", best["tsla"], best[other],
                        best["tsla"] >= best[other], 0.0, ">=",
                    )
                )
    for check in checks:
        logger.info(check.describe())
    return checks


def all_passed(checks: Sequence[BoundCheck]) -> bool:
    return all(check.passed for check in checks)
