from concurrent.futures import ThreadPoolExecutor
from multiprocessing import cpu_count
from typing import Any, Callable, Iterable, List, Optional, TypeVar

T = TypeVar('T')
R = TypeVar('R')


def get_chunk_size(
    lst: List[Any],
    proportion_of_available_cpus: float = 1,
) -> int:
    if proportion_of_available_cpus < 0 or proportion_of_available_cpus > 1:
        raise ValueError("proportion_of_available_cpus should be in [0, 1]")
    chunk_size = int(len(lst) // (proportion_of_available_cpus * cpu_count()))
    if chunk_size == 0:
        chunk_size = len(lst)
    return chunk_size


def chunk_list(
    lst: List[Any],
    chunk_size: Optional[int] = None,
) -> List[List[Any]]:
    chunk_size = chunk_size if chunk_size is not None else get_chunk_size(lst)
    return [lst[i : i + chunk_size] for i in range(0, len(lst), chunk_size)]


def resolve_threads(threads: Optional[int]) -> int:
    """Number of workers to use; ``None`` or ``0`` means all cores."""
    if threads is None or threads == 0:
        return cpu_count()
    if threads < 0:
        raise ValueError("threads should be a positive integer")
    return threads


def ordered_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    threads: Optional[int] = 1,
) -> List[R]:
    """Apply `fn` to every item, returning results in input order.

    The work is split in chunks over a thread pool. numpy and scipy kernels
    release the GIL, so threads run concurrently, and since every result is
    placed by index the output does not depend on the number of workers.

    :param fn: The function to apply.
    :param items: The inputs.
    :param threads: The number of workers. ``None`` or ``0`` uses every core.
    :return: ``[fn(item) for item in items]``.
    """
    items = list(items)
    workers = min(resolve_threads(threads), max(len(items), 1))
    if workers <= 1:
        return [fn(item) for item in items]

    chunks = chunk_list(items, max(1, -(-len(items) // workers)))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = executor.map(lambda chunk: [fn(i) for i in chunk], chunks)
        return [r for chunk in results for r in chunk]
