"""Data-parallel helper: split a list into contiguous partitions and map a
function over them on a chosen backend."""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

BACKENDS = ("serial", "thread", "process")


class PartitionError(RuntimeError):
    """Failure in one partition; carries which one so the caller can point
    at the offending slice of the input."""

    def __init__(self, partition_index: int, cause: BaseException):
        super().__init__(f"partition {partition_index} failed: {cause!r}")
        self.partition_index = partition_index
        self.cause = cause


def split_partitions(items: Sequence[T], partitions: int) -> list[list[T]]:
    """Contiguous, order-preserving split into exactly ``partitions`` chunks.

    Sizes differ by at most one; when there are fewer items than partitions
    the tail chunks are empty.
    """
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    items = list(items)
    base, extra = divmod(len(items), partitions)
    chunks = []
    start = 0
    for i in range(partitions):
        size = base + (1 if i < extra else 0)
        chunks.append(items[start : start + size])
        start += size
    return chunks


def map_partitions(
    items: Sequence[T],
    fn: Callable[[list[T]], R],
    partitions: int = 1,
    backend: str = "process",
) -> list[R]:
    """Apply ``fn`` to each contiguous partition of ``items``.

    Results come back in partition order, so concatenating them preserves
    the input order. ``fn`` must be picklable for the process backend
    (a module-level function, possibly wrapped in ``functools.partial``).
    A failing partition raises :class:`PartitionError` with its index.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    chunks = split_partitions(items, partitions)

    if backend == "serial" or partitions == 1:
        results = []
        for i, chunk in enumerate(chunks):
            try:
                results.append(fn(chunk))
            except Exception as exc:
                raise PartitionError(i, exc) from exc
        return results

    if backend == "thread":
        executor = ThreadPoolExecutor(max_workers=partitions)
    else:
        # fork keeps already-imported modules and loaded data available to
        # workers without re-pickling the world on every call
        ctx = multiprocessing.get_context("fork")
        executor = ProcessPoolExecutor(max_workers=partitions, mp_context=ctx)
    with executor:
        futures = [executor.submit(fn, chunk) for chunk in chunks]
        results = []
        for i, future in enumerate(futures):
            try:
                results.append(future.result())
            except Exception as exc:
                raise PartitionError(i, exc) from exc
    return results
