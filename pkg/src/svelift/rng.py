"""Seed derivation and deterministic block-parallel execution."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

BLOCK_SIZE = 256


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(master: int, tag: str, index: int) -> np.random.Generator:
    """Independent generator for ``(master seed, purpose tag, index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(master), tag_key(tag), int(index)]))


def brownian_increments(master: int, tag: str, path_ids: Sequence[int], steps: int, d: int, h: float) -> np.ndarray:
    """Increments of shape ``(len(path_ids), steps, d)``, one stream per path."""
    out = np.empty((len(path_ids), steps, d))
    sq = np.sqrt(h)
    for i, p in enumerate(path_ids):
        out[i] = stream(master, tag, p).standard_normal((steps, d)) * sq
    return out


def path_blocks(n_paths: int, block: int = BLOCK_SIZE) -> list[np.ndarray]:
    return [np.arange(s, min(s + block, n_paths)) for s in range(0, n_paths, block)]


def map_blocks(fn: Callable[[np.ndarray], object], n_paths: int, threads: int = 1) -> list:
    """Apply ``fn`` to fixed-size path blocks; results come back in block order.

    Block boundaries do not depend on ``threads``, so outputs are identical for
    any thread count.
    """
    blocks = path_blocks(n_paths)
    if threads <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, blocks))
