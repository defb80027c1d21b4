"""Handler for `sweep <config>`: every sweep point (drop epochs or theta values).

Steps:
1. Load the config and check it has a sweep section
2. Run every sweep point for every repeat
3. Write traces, summaries, and the report
"""

import logging
import sys
from typing import Optional

from commands import failure_exit_code
from src.errors import ConfigurationError
from src.experiment_config import load_config_source
from src.reporter import compare_report
from src.runner import run_experiment

logger = logging.getLogger("lsr-lab.commands.sweep")


def handle(source: str, output_dir: Optional[str] = None, workers: Optional[int] = None) -> int:
    logger.info("Sweep started: %s", source)
    try:
        logger.info("Step 1: Loading config")
        config = load_config_source(source)
        if config.sweep is None:
            raise ConfigurationError(f"config '{config.name}' has no sweep section")

        logger.info(
            "Step 2: Sweeping %s over %d values, %d repeats each",
            config.sweep.kind, len(config.sweep.values), config.repeats,
        )
        result = run_experiment(config, include_sweep=True, workers=workers, output_dir=output_dir)

        logger.info("Step 3: Results written to %s", result.output_dir)
        sys.stdout.write(compare_report(result.summaries, title=config.name))
        return 0
    except Exception as e:
        return failure_exit_code("Sweep", e)
