"""Reproducible random streams for replicate-parallel estimation.

Streams are derived from a counter-based generator (Philox) keyed by
(seed, purpose, chunk index). Replicates are processed in fixed-size chunks,
each chunk owning an independent stream, so results depend only on the
(seed, reps, chunk_size) triple and never on how chunks are distributed
over workers.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_CHUNK = 4096

THREADS_ENV_VAR = "BPRE_THREADS"


def purpose_code(purpose: str) -> int:
    """Stable 32-bit code for a stream purpose label."""
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, chunk_index: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, purpose, chunk_index)."""
    ss = np.random.SeedSequence(
        entropy=seed, spawn_key=(purpose_code(purpose), chunk_index)
    )
    return np.random.Generator(np.random.Philox(ss))


def seed_provenance(seed: int, purpose: str, chunk_size: int = DEFAULT_CHUNK) -> str:
    return f"philox seed={seed} purpose={purpose} chunk_size={chunk_size}"


def chunk_bounds(reps: int, chunk_size: int = DEFAULT_CHUNK) -> Iterator[tuple[int, int, int]]:
    """Yield (chunk_index, start, stop) covering range(reps)."""
    index = 0
    start = 0
    while start < reps:
        stop = min(start + chunk_size, reps)
        yield index, start, stop
        index += 1
        start = stop


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def run_chunks(
    fn: Callable[[np.random.Generator, int, int], Sequence[np.ndarray]],
    reps: int,
    seed: int,
    purpose: str,
    chunk_size: int = DEFAULT_CHUNK,
) -> list[np.ndarray]:
    """Map ``fn(rng, count, start)`` over chunks and concatenate its outputs.

    ``fn`` must return the same tuple of per-replicate arrays for every chunk.
    Outputs are concatenated in chunk order, so the reduction is independent
    of the worker count.
    """
    bounds = list(chunk_bounds(reps, chunk_size))
    results: list[Sequence[np.ndarray]] = [None] * len(bounds)  # type: ignore[list-item]

    def work(entry):
        index, start, stop = entry
        rng = stream(seed, purpose, index)
        results[index] = fn(rng, stop - start, start)

    workers = thread_count()
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, bounds))
    else:
        for entry in bounds:
            work(entry)

    nfields = len(results[0])
    return [np.concatenate([r[i] for r in results]) for i in range(nfields)]
