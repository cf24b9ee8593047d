"""Counter-based random streams and deterministic chunked draw generation.

Streams use numpy's Philox-4x64-10 bit generator. The 128-bit key is
``(master seed, module id)`` where the module id is the first 8 bytes of the
BLAKE2b digest of the stream name. Chunk ``c`` starts its counter at
``c << 192``, so chunks never share counter values and any chunk can be
regenerated on its own. Draw ``i`` always lives in chunk ``i // chunk_size``,
hence any partition of chunks across workers reproduces the same samples.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

DEFAULT_SEED = 20130807
DEFAULT_CHUNK = 1 << 14

_MASK64 = (1 << 64) - 1


def _name_id(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RandomStream:
    """A named, seeded family of independent generators indexed by chunk."""

    seed: int = DEFAULT_SEED
    name: str = "root"

    def generator(self, chunk: int = 0) -> np.random.Generator:
        if chunk < 0:
            raise ValueError("chunk index must be non-negative")
        bitgen = np.random.Philox(
            key=[self.seed & _MASK64, _name_id(self.name)],
            counter=chunk << 192,
        )
        return np.random.Generator(bitgen)

    def child(self, name: str) -> "RandomStream":
        return RandomStream(self.seed, f"{self.name}/{name}")


def chunk_sizes(n_draws: int, chunk_size: int = DEFAULT_CHUNK) -> list[int]:
    if n_draws < 0 or chunk_size < 1:
        raise ValueError("need n_draws >= 0 and chunk_size >= 1")
    full, rest = divmod(n_draws, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def _run_chunk(job):
    sampler, args, stream, chunk, size = job
    return sampler(*args, stream.generator(chunk), size)


def generate(
    sampler: Callable[..., Any],
    args: tuple,
    n_draws: int,
    stream: RandomStream,
    *,
    chunk_size: int = DEFAULT_CHUNK,
    workers: int = 1,
) -> list:
    """Run ``sampler(*args, rng, size)`` over fixed chunks; results in chunk order.

    ``sampler`` must be a module-level function when ``workers > 1``.
    """
    jobs = [(sampler, args, stream, c, size) for c, size in enumerate(chunk_sizes(n_draws, chunk_size))]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_chunk(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_chunk, jobs))
