"""
Worker pool for chunked Monte Carlo work
Results always come back in chunk-index order, whatever the worker count
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_chunks(fn: Callable[[T], R], tasks: Sequence[T], workers: int = 1) -> List[R]:
    """
    Apply fn to every task

    Args:
        fn: Picklable module-level function
        tasks: One task per chunk
        workers: Process count; 1 runs in-process

    Returns:
        Results indexed like tasks
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        results = []
        for i, task in enumerate(tasks):
            results.append(fn(task))
            logger.debug(f"Chunk {i + 1}/{len(tasks)} done")
        return results
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        # map() yields in submission order
        return list(pool.map(fn, tasks))
