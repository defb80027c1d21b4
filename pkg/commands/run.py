"""Handler for `run <config>`: one plan row per algorithm, no sweep.

Steps:
1. Load and validate the config
2. Run every repeat
3. Write traces, summaries, and the report
"""

import logging
import sys
from typing import Optional

from commands import failure_exit_code
from src.experiment_config import load_config_source
from src.reporter import compare_report
from src.runner import run_experiment

logger = logging.getLogger("lsr-lab.commands.run")


def handle(source: str, output_dir: Optional[str] = None, workers: Optional[int] = None) -> int:
    logger.info("Run started: %s", source)
    try:
        logger.info("Step 1: Loading config")
        config = load_config_source(source)

        logger.info("Step 2: Running '%s' with %d repeats", config.name, config.repeats)
        result = run_experiment(
            config, include_sweep=False, workers=workers, output_dir=output_dir
        )

        logger.info("Step 3: Results written to %s", result.output_dir)
        sys.stdout.write(compare_report(result.summaries, title=config.name))
        return 0
    except Exception as e:
        return failure_exit_code("Run", e)
