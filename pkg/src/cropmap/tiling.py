"""Row-band tiling with a thread pool.

Tiles are fixed by ``tile_rows`` alone, never by the worker count, so any
per-pixel computation returns the same bits for every degree of parallelism.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")

DEFAULT_TILE_ROWS = 32


def row_tiles(height: int, tile_rows: int = DEFAULT_TILE_ROWS) -> list[tuple[int, int]]:
    tile_rows = max(1, int(tile_rows))
    return [(r, min(r + tile_rows, height)) for r in range(0, height, tile_rows)]


def resolve_workers(n_workers: int | None) -> int:
    if n_workers is None or n_workers <= 0:
        return os.cpu_count() or 1
    return n_workers


def map_tiles(fn: Callable[[int, int], T], height: int, n_workers: int | None = 1,
              tile_rows: int = DEFAULT_TILE_ROWS) -> list[T]:
    """Apply ``fn(row_start, row_stop)`` to every tile; results in tile order."""
    tiles = row_tiles(height, tile_rows)
    workers = resolve_workers(n_workers)
    if workers == 1 or len(tiles) == 1:
        return [fn(a, b) for a, b in tiles]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: fn(*t), tiles))
