"""Handler for `estimate <config>`: problem constants and the Lemma 1 check.

Steps:
1. Load the config and build its oracle
2. Estimate L, mu, sigma2, delta, and F(w0)
3. Check the smoothed-gradient variance against its bound
4. Derive the regime, schedules, and sample complexities (when epsilon is set)
5. Write constants.txt
"""

import logging
import os
import sys
from typing import Optional

from commands import failure_exit_code
from src.errors import DegenerateProblemError, ScheduleInfeasibleError
from src.estimators import (
    baseline_schedule,
    classify_regime,
    estimate_constants,
    format_kv_report,
    lsr_schedule,
    sample_complexity,
    tsla_schedule,
    verify_lemma1,
)
from src.experiment_config import load_config_source
from src.labels import LabelDistribution, SmoothingSpec
from src.runner import build_oracle

logger = logging.getLogger("lsr-lab.commands.estimate")


def _schedules_report(constants, epsilon: float) -> str:
    sections = [f"epsilon={epsilon!r}\n"]
    if constants.sigma2 > 0:
        regime = classify_regime(constants.delta, epsilon, constants.sigma2)
        sections.append(format_kv_report(regime, "regime."))
    sections.append(format_kv_report(baseline_schedule(constants, epsilon), "baseline."))
    for name, build in (("lsr", lsr_schedule), ("tsla", tsla_schedule)):
        try:
            sections.append(format_kv_report(build(constants, epsilon), f"{name}."))
        except (DegenerateProblemError, ScheduleInfeasibleError) as e:
            logger.warning("No %s schedule: %s", name, e)
            sections.append(f"{name}.unavailable={e}\n")
    if constants.sigma2 > 0:
        sections.append(format_kv_report(sample_complexity(constants, epsilon), "sample_complexity."))
    return "".join(sections)


def build_report(config, oracle=None) -> str:
    """The full key-value constants report for a config."""
    oracle = build_oracle(config) if oracle is None else oracle
    algorithm = config.algorithm
    fixed = LabelDistribution(algorithm.fixed) if algorithm.fixed is not None else None

    logger.info("Step 2: Estimating problem constants")
    constants = estimate_constants(oracle, source=algorithm.source, fixed=fixed, seed=config.base_seed)
    sections = [format_kv_report(constants, "constants.")]

    logger.info("Step 3: Checking the smoothed-gradient variance")
    if constants.sigma2 > 0:
        theta = algorithm.theta if algorithm.theta else 1.0 / (1.0 + constants.delta)
        spec = SmoothingSpec(min(theta, 0.999999), algorithm.source, fixed)
        report = verify_lemma1(oracle, None, spec, seed=config.base_seed, theta=theta)
        sections.append(format_kv_report(report, "variance."))
    else:
        logger.warning("sigma2 = 0: skipping the smoothed-variance check")

    epsilon = config.verify.epsilon
    if epsilon is not None:
        logger.info("Step 4: Deriving schedules for epsilon=%g", epsilon)
        sections.append(_schedules_report(constants, epsilon))
    return "".join(sections)


def handle(source: str, output_dir: Optional[str] = None) -> int:
    logger.info("Estimate started: %s", source)
    try:
        logger.info("Step 1: Loading config and building the oracle")
        config = load_config_source(source)
        oracle = build_oracle(config)

        text = build_report(config, oracle)

        target = output_dir or config.resolved_output_dir
        os.makedirs(target, exist_ok=True)
        path = os.path.join(target, "constants.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        logger.info("Step 5: Wrote %s", path)
        sys.stdout.write(text)
        return 0
    except Exception as e:
        return failure_exit_code("Estimate", e)
