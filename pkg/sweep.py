import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Hashable, List, Optional, Sequence, Tuple, TypeVar

logger = logging.getLogger(__name__)

K = TypeVar('K', bound=Hashable)
R = TypeVar('R')


def resolve_threads(threads: Optional[int] = None) -> int:
    """
    Worker count from --threads, else SKYRLAB_THREADS, else 1.

    Args:
        threads: value of the command-line flag, if given

    Returns:
        int: number of worker threads, at least 1
    """
    if threads is not None:
        return max(1, int(threads))
    value = os.environ.get('SKYRLAB_THREADS', '')
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        logger.warning(f"Ignoring SKYRLAB_THREADS={value!r}: not an integer")
        return 1


def run_sweep(func: Callable[[K], R], keys: Sequence[K], threads: int = 1) -> List[Tuple[K, R]]:
    """
    Evaluate func at every key, possibly concurrently.

    The result is merged in sorted key order, so the thread count never
    changes the output.

    Args:
        func: pure function of one sweep key
        keys: sweep points
        threads: worker threads

    Returns:
        List[Tuple[K, R]]: (key, result) pairs sorted by key
    """
    keys = list(keys)
    if threads <= 1 or len(keys) <= 1:
        results = [func(k) for k in keys]
    else:
        logger.debug(f"Sweeping {len(keys)} points on {threads} threads")
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(func, keys))
    return sorted(zip(keys, results), key=lambda kr: kr[0])
