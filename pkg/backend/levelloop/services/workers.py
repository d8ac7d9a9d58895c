"""Replica fan-out over a process pool.

Replica i always draws from `stream.for_replica(i)` and results come back in replica
order, so the worker count never changes a report.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import repeat
from typing import Any, Callable

from levelloop.errors import LevelLoopError
from levelloop.services.rng import StreamId

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReplicaOutcome:
    replica: int
    value: Any = None
    error: str | None = None
    message: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_replica(fn: Callable[[StreamId], Any], stream: StreamId, replica: int) -> ReplicaOutcome:
    try:
        return ReplicaOutcome(replica, fn(stream.for_replica(replica)))
    except LevelLoopError as e:
        logger.warning(f"replica {replica} failed: {type(e).__name__}: {e}")
        return ReplicaOutcome(replica, error=type(e).__name__, message=str(e))


def parallel_replicas(
    fn: Callable[[StreamId], Any], stream: StreamId, n: int, *, workers: int = 1, first: int = 0
) -> list[ReplicaOutcome]:
    """Run `fn` on replicas first..first+n-1; `fn` must be picklable when workers > 1."""
    if n < 1:
        raise ValueError(f"need at least one replica, got {n}")
    replicas = range(first, first + n)
    if workers <= 1 or n == 1:
        return [run_replica(fn, stream, i) for i in replicas]
    chunksize = max(n // (4 * workers), 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_replica, repeat(fn), repeat(stream), replicas, chunksize=chunksize))
