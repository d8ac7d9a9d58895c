"""Counter-based random streams keyed by (seed, replica, purpose).

Every engine call receives a `StreamId` and derives children for its sub-tasks, so a
replica draws the same numbers whichever worker runs it and in whatever order.
"""

from dataclasses import dataclass

import numpy as np

SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class StreamId:
    seed: int
    replica: int = 0
    purpose: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & SEED_MASK)
        if self.replica < 0 or any(k < 0 for k in self.purpose):
            raise ValueError("stream keys must be nonnegative")

    def child(self, *key: int) -> "StreamId":
        return StreamId(self.seed, self.replica, self.purpose + tuple(int(k) for k in key))

    def for_replica(self, replica: int) -> "StreamId":
        return StreamId(self.seed, replica, self.purpose)

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.seed, spawn_key=(self.replica, *self.purpose))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))


class GaussianBlocks:
    """Standard normals drawn in fixed-size blocks from one stream."""

    def __init__(self, stream: StreamId, block: int = 4096, negate: bool = False):
        self._gen = stream.generator()
        self._block = block
        self._sign = -1.0 if negate else 1.0
        self._buf = np.empty(0)
        self._pos = 0

    def next(self) -> float:
        if self._pos >= self._buf.size:
            self._buf = self._sign * self._gen.standard_normal(self._block)
            self._pos = 0
        z = self._buf[self._pos]
        self._pos += 1
        return float(z)
