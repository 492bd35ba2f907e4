"""
Seeding for replayable random streams.

Exit trajectories draw from their own Philox stream: the key comes from
(seed, stream) and the trajectory id sits in the high words of the 256-bit
counter, so trajectory k's noise is the same whatever block or worker
thread integrates it, and one trajectory can be replayed alone.

The exact Gaussian samplers draw in fixed chunks keyed by
(seed, stream, chunk).
"""

from functools import lru_cache
from typing import Sequence

import numpy as np

# stream ids
EXIT_STREAM = 0
TRACKING_STREAM = 1
GAUSSIAN_STREAM = 2
DUHAMEL_STREAM = 3


def _check_seed(seed: int) -> None:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")


def block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    """Philox generator for one (seed, stream, block) key."""
    _check_seed(seed)
    key = np.random.SeedSequence([int(seed), int(stream), int(block)])
    return np.random.Generator(np.random.Philox(key))


@lru_cache(maxsize=64)
def _philox_key(seed: int, stream: int) -> tuple:
    return tuple(int(v) for v in np.random.SeedSequence([seed, stream]).generate_state(2, np.uint64))


def trajectory_generator(seed: int, stream: int, trajectory_id: int) -> np.random.Generator:
    """Philox generator for trajectory_id; its counter space never meets another trajectory's."""
    _check_seed(seed)
    if trajectory_id < 0:
        raise ValueError(f"trajectory_id must be non-negative, got {trajectory_id}")
    key = np.array(_philox_key(int(seed), int(stream)), dtype=np.uint64)
    counter = np.array([0, 0, int(trajectory_id), 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class TrajectoryNoise:
    """
    Standard normal increments for a group of trajectories.

    Row r of every draw belongs to trajectory ids[r] and is its step-th
    increment, buffered CHUNK steps at a time. Only rows still alive at a
    refill draw more, which does not change what any later step receives.
    """

    CHUNK = 256

    def __init__(self, seed: int, stream: int, ids: Sequence[int], dim: int):
        self.generators = [trajectory_generator(seed, stream, int(k)) for k in ids]
        self.dim = dim
        self.buffer = np.empty((len(self.generators), self.CHUNK, dim))

    def draw(self, rows: np.ndarray, step: int) -> np.ndarray:
        slot = step % self.CHUNK
        if slot == 0:
            for r in rows:
                self.generators[r].standard_normal(out=self.buffer[r])
        return self.buffer[rows, slot]


def block_ranges(n: int, block_size: int):
    """Yield (block_index, start, stop) covering range(n)."""
    for block, start in enumerate(range(0, n, block_size)):
        yield block, start, min(start + block_size, n)


def ladder_stream(rung: int) -> int:
    """Exit-stream id for the rung-th ε of a ladder (rungs never share noise)."""
    return 16 + int(rung)
