"""Seed derivation and buffered random streams."""

import logging
from typing import Callable, List

import numpy as np

from config.settings import STREAM_BLOCK

logger = logging.getLogger("lsr-lab.rng")

# Stream roles spawned from every run seed. Sampling indices and the two
# noise sources never share a generator.
STREAM_INDEX = 0
STREAM_UNBIASED = 1
STREAM_HAT = 2
NUM_STREAMS = 3


def run_seed(base_seed: int, sweep_index: int, repeat_index: int) -> int:
    """Seed for one run.

    Seeds repeat across sweep points so every algorithm variant shares the
    same sample paths for paired comparison.
    """
    return int(base_seed) + int(repeat_index)


def spawn_generators(seed: int, count: int = NUM_STREAMS) -> List[np.random.Generator]:
    """Independent generators for the stream roles of one run seed."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.default_rng(child) for child in children]


class BufferedStream:
    """Serves draws from fixed-size blocks so the values a run sees never
    depend on how many draws each call asks for."""

    def __init__(
        self,
        rng: np.random.Generator,
        draw: Callable[[np.random.Generator, int], np.ndarray],
        block: int = STREAM_BLOCK,
    ):
        self.rng = rng
        self._draw = draw
        self.block = block
        self._buffer = draw(rng, 0)
        self._pos = 0

    def take(self, count: int) -> np.ndarray:
        parts = []
        needed = count
        while needed > 0:
            available = self._buffer.shape[0] - self._pos
            if available == 0:
                self._buffer = self._draw(self.rng, self.block)
                self._pos = 0
                available = self.block
            n = min(needed, available)
            parts.append(self._buffer[self._pos : self._pos + n])
            self._pos += n
            needed -= n
        if not parts:
            return self._buffer[:0]
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
