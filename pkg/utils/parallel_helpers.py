"""Ordered process-pool execution for independent runs."""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence, TypeVar

logger = logging.getLogger("lsr-lab.parallel")

T = TypeVar("T")
R = TypeVar("R")


def run_ordered(
    func: Callable[[T], R],
    tasks: Sequence[T],
    workers: int = 1,
    description: str = "task",
) -> List[R]:
    """Apply func to every task and return results in task order.

    With more than one worker the tasks run in separate processes; the
    result list is still ordered by task, so aggregation never depends on
    completion order.
    """
    if workers <= 1 or len(tasks) <= 1:
        results = []
        for i, task in enumerate(tasks):
            logger.debug("%s %d/%d", description, i + 1, len(tasks))
            results.append(func(task))
        return results

    workers = min(workers, len(tasks))
    logger.info("Running %d %ss on %d workers", len(tasks), description, workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))
