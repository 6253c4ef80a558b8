"""Deterministic named random streams.

Every stochastic component draws from a `numpy` Generator derived from a
tuple of keys (ints and strings). Streams for distinct key tuples are
statistically independent, and the same keys always reproduce the same
stream, which is what makes runs replayable and worker-count invariant:
each task derives its own stream from its index instead of sharing one.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Sequence, TypeVar

import numpy as np

Key = int | str

_T = TypeVar("_T")


def _as_entropy(key: Key) -> int:
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    value = int(key)
    if value < 0:
        value += 1 << 64
    return value


def seed_sequence(*keys: Key) -> np.random.SeedSequence:
    """Build a SeedSequence from a tuple of int/str keys."""
    if not keys:
        raise ValueError("at least one key is required")
    return np.random.SeedSequence([_as_entropy(k) for k in keys])


def stream(*keys: Key) -> np.random.Generator:
    """Deterministic Generator for the given key tuple."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*keys)))


def get_state(gen: np.random.Generator) -> dict[str, Any]:
    """Serializable snapshot of a Generator's full state."""
    return gen.bit_generator.state


def set_state(gen: np.random.Generator, state: dict[str, Any]) -> None:
    gen.bit_generator.state = state


def restore(state: dict[str, Any]) -> np.random.Generator:
    """Build a Generator positioned at a previously captured state."""
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen


def draw_seed(gen: np.random.Generator) -> int:
    """Draw a child seed from a live stream (consumes one value)."""
    return int(gen.integers(0, 2**63 - 1))


def run_indexed(n_tasks: int, fn: Callable[[int], _T], workers: int = 1) -> list[_T]:
    """Evaluate fn(0..n_tasks-1), optionally on a thread pool.

    Results are returned in index order, so output never depends on the
    worker count; each task must derive its own random stream from its
    index. Workloads are mostly GIL-bound, so this bounds concurrency
    rather than promising speedup.
    """
    if n_tasks <= 0:
        return []
    if workers <= 1 or n_tasks == 1:
        return [fn(i) for i in range(n_tasks)]
    with ThreadPoolExecutor(max_workers=min(workers, n_tasks)) as pool:
        return list(pool.map(fn, range(n_tasks)))
