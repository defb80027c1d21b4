"""Environment-aware configuration for lsr-lab."""

import os
import logging
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

# Worker-count override for concurrent runs. Never changes results.
WORKERS_ENV = "LSR_LAB_WORKERS"

DEFAULT_LOG_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

logger = logging.getLogger("lsr-lab")

# Reals in every result file are written with 17 significant digits so a
# write/read cycle reproduces the float64 value exactly.
FLOAT_FORMAT = "%.17g"

# Tolerances shared by validators
SIMPLEX_TOL = 1e-9
OPTIMUM_GAP = 1e-12

# Safety factor applied to sampled Lipschitz ratios
LIPSCHITZ_SAFETY = 1.1

# Replicas advanced together in one array program for synthetic oracles
DEFAULT_REPLICA_BLOCK = 50

# Draws prefetched per random stream refill
STREAM_BLOCK = 1024


def configure_logging(level: Optional[str] = None) -> None:
    """Set up root logging once for CLI and script entry points."""
    level_name = (level or DEFAULT_LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
    )


def get_worker_count(configured: int = 1) -> int:
    """Return the worker count, honoring the environment override."""
    raw = os.getenv(WORKERS_ENV)
    if not raw:
        return max(1, configured)
    try:
        workers = int(raw)
    except ValueError:
        logger.warning("Ignoring non-integer %s=%r", WORKERS_ENV, raw)
        return max(1, configured)
    return max(1, workers)
