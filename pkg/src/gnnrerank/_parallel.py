"""Row-block parallelism with fixed block boundaries.

Blocks are cut at fixed row offsets regardless of the thread count, and each
block's result is written to its own slot, so output is bit-identical for any
number of threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterator, TypeVar

from threadpoolctl import ThreadpoolController

T = TypeVar("T")

BLOCK_ROWS = 512


def row_blocks(n: int, block: int = BLOCK_ROWS) -> list[slice]:
    return [slice(s, min(s + block, n)) for s in range(0, n, block)]


def map_blocks(fn: Callable[[slice], T], n: int, threads: int = 1, block: int = BLOCK_ROWS) -> list[T]:
    blocks = row_blocks(n, block)
    if threads <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


_controller: ThreadpoolController | None = None
_depth = 0


@contextmanager
def single_threaded_blas() -> Iterator[None]:
    # BLAS threading would make results depend on the BLAS pool size.
    global _controller, _depth
    if _depth:
        _depth += 1
        try:
            yield
        finally:
            _depth -= 1
        return
    if _controller is None:
        _controller = ThreadpoolController()
    with _controller.limit(limits=1, user_api="blas"):
        _depth = 1
        try:
            yield
        finally:
            _depth = 0
