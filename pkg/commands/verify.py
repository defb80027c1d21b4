"""Handler for `verify <config>`: run an experiment and check it against the theory.

Steps:
1. Load the config and build its oracle
2. Estimate problem constants
3. Run the experiment (sweep included)
4. Evaluate the configured checks
5. Write results with the check table; exit 8 if any check fails
"""

import logging
import sys
from typing import List, Optional

from commands import failure_exit_code
from src.errors import VERIFICATION_FAILED_EXIT
from src.estimators import estimate_constants
from src.experiment_config import load_config_source
from src.labels import LabelDistribution
from src.reporter import compare_report
from src.runner import ExperimentResult, build_oracle, run_experiment, write_results
from src.verifier import (
    BoundCheck,
    all_passed,
    bound_checks,
    drop_accuracy_checks,
    ordering_checks,
)

logger = logging.getLogger("lsr-lab.commands.verify")


def evaluate_checks(result: ExperimentResult) -> List[BoundCheck]:
    """Every check the config's verify section asks for."""
    config = result.config
    checks: List[BoundCheck] = []
    for name in config.verify.checks:
        if name == "bounds":
            checks += bound_checks(result.plan, result.traces, result.constants, config.verify.epsilon)
        elif name == "ordering":
            checks += ordering_checks(result.plan, result.traces, result.constants.delta)
        elif name == "drop_accuracy":
            checks += drop_accuracy_checks(result.plan, result.traces, result.epoch_length)
    return checks


def handle(source: str, output_dir: Optional[str] = None, workers: Optional[int] = None) -> int:
    logger.info("Verify started: %s", source)
    try:
        logger.info("Step 1: Loading config and building the oracle")
        config = load_config_source(source)
        oracle = build_oracle(config)

        logger.info("Step 2: Estimating problem constants")
        algorithm = config.algorithm
        fixed = LabelDistribution(algorithm.fixed) if algorithm.fixed is not None else None
        constants = estimate_constants(
            oracle, source=algorithm.source, fixed=fixed, seed=config.base_seed
        )

        logger.info("Step 3: Running '%s'", config.name)
        result = run_experiment(
            config, include_sweep=True, workers=workers, constants=constants,
            write=False, oracle=oracle,
        )

        logger.info("Step 4: Evaluating checks %s", ", ".join(config.verify.checks))
        checks = evaluate_checks(result)

        target = output_dir or config.resolved_output_dir
        write_results(result, target, checks)
        logger.info("Step 5: Results written to %s", target)
        sys.stdout.write(compare_report(result.summaries, checks, title=config.name))

        if not all_passed(checks):
            failed = sum(1 for check in checks if not check.passed)
            logger.error("Verification FAILED: %d of %d checks", failed, len(checks))
            return VERIFICATION_FAILED_EXIT
        return 0
    except Exception as e:
        return failure_exit_code("Verify", e)
