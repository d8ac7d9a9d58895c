from functools import partial

import numpy as np
import pytest

from levelloop.errors import LevelLoopError, NoLoopFound
from levelloop.services.experiments import _exp1_p_value
from levelloop.services.rng import GaussianBlocks, StreamId
from levelloop.services.workers import parallel_replicas, run_replica


def test_streams_are_reproducible():
    a = StreamId(3).child(1, 2).generator().standard_normal(5)
    b = StreamId(3).child(1, 2).generator().standard_normal(5)
    assert np.array_equal(a, b)


def test_stream_keys_separate_draws():
    root = StreamId(3)
    draws = {
        key: stream.generator().uniform()
        for key, stream in {
            "root": root,
            "child": root.child(0),
            "other_child": root.child(1),
            "replica": root.for_replica(1),
            "other_seed": StreamId(4),
        }.items()
    }
    assert len(set(draws.values())) == len(draws)


def test_seed_is_reduced_to_64_bits():
    assert StreamId(2**64 + 5).seed == 5
    with pytest.raises(ValueError):
        StreamId(1, replica=-1)
    with pytest.raises(ValueError):
        StreamId(1).child(-2)


def test_negated_gaussian_blocks():
    plain = GaussianBlocks(StreamId(9), block=4)
    negated = GaussianBlocks(StreamId(9), block=4, negate=True)
    for _ in range(10):
        assert negated.next() == -plain.next()


def _fails_on_odd(stream: StreamId) -> int:
    if stream.replica % 2:
        raise NoLoopFound("odd replica")
    return stream.replica


def test_run_replica_captures_engine_errors():
    outcome = run_replica(_fails_on_odd, StreamId(0), 3)
    assert not outcome.ok
    assert outcome.error == "NoLoopFound"
    assert run_replica(_fails_on_odd, StreamId(0), 2).value == 2


def test_replicas_come_back_in_order():
    outcomes = parallel_replicas(_fails_on_odd, StreamId(0), 5, first=10)
    assert [o.replica for o in outcomes] == [10, 11, 12, 13, 14]
    assert [o.value for o in outcomes if o.ok] == [10, 12, 14]
    with pytest.raises(ValueError):
        parallel_replicas(_fails_on_odd, StreamId(0), 0)


def test_other_errors_propagate():
    def broken(stream):
        raise RuntimeError("bug")

    assert not issubclass(RuntimeError, LevelLoopError)
    with pytest.raises(RuntimeError):
        parallel_replicas(broken, StreamId(0), 2)


def test_worker_count_does_not_change_results():
    fn = partial(_exp1_p_value, size=50, rate=1.0)
    serial = parallel_replicas(fn, StreamId(21), 8, workers=1)
    pooled = parallel_replicas(fn, StreamId(21), 8, workers=2)
    assert [o.value for o in serial] == [o.value for o in pooled]
