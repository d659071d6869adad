"""Notification channel contract: packing, read-and-clear, blocking, waiting."""

from __future__ import annotations

import random
import threading
import time

import pytest

from corefill.channel import (
    HALF_MOD,
    BusyReaderError,
    CounterOverflowError,
    EventBatch,
    EventChannel,
    OverflowMode,
    pack,
    unpack,
    wait_any,
)


# ----------------------------------------------------------------------
# pack / unpack
# ----------------------------------------------------------------------
def test_pack_zero():
    assert pack(0, 0) == 0


def test_pack_layout_low_blocked_high_unblocked():
    assert pack(1, 0) == 1
    assert pack(0, 1) == 2**32


def test_unpack_zero():
    assert unpack(0) == EventBatch(0, 0)


def test_unpack_mixed_value():
    assert unpack(2**32 + 3) == EventBatch(blocked=3, unblocked=1)


def test_pack_unpack_round_trip_random():
    rng = random.Random(0xC0FE)
    for _ in range(1000):
        blocked = rng.randrange(HALF_MOD)
        unblocked = rng.randrange(HALF_MOD)
        assert unpack(pack(blocked, unblocked)) == EventBatch(blocked, unblocked)


@pytest.mark.parametrize("boundary", [0, 1, HALF_MOD - 1])
def test_pack_unpack_boundaries(boundary):
    for other in (0, 1, HALF_MOD - 1):
        assert unpack(pack(boundary, other)) == EventBatch(boundary, other)


def test_pack_rejects_out_of_range():
    with pytest.raises(CounterOverflowError):
        pack(HALF_MOD, 0)
    with pytest.raises(CounterOverflowError):
        pack(0, HALF_MOD)


# ----------------------------------------------------------------------
# record / drain
# ----------------------------------------------------------------------
def test_single_block_drains_as_one_zero():
    chan = EventChannel()
    chan.record_block()
    assert chan.drain() == EventBatch(1, 0)


def test_single_unblock_drains_as_zero_one():
    chan = EventChannel()
    chan.record_unblock()
    assert chan.drain() == EventBatch(0, 1)


def test_counting_three_blocks_two_unblocks():
    chan = EventChannel()
    for _ in range(3):
        chan.record_block()
    for _ in range(2):
        chan.record_unblock()
    assert chan.drain() == EventBatch(3, 2)


def test_interleaved_counting():
    chan = EventChannel()
    for _ in range(5):
        chan.record_block()
        chan.record_unblock()
    assert chan.drain() == EventBatch(5, 5)


def test_clear_on_read():
    chan = EventChannel()
    chan.record_block()
    chan.record_block()
    chan.record_unblock()
    assert chan.drain() == EventBatch(2, 1)
    assert chan.drain() is None  # cleared, second drain would block
    chan.record_unblock()
    assert chan.drain() == EventBatch(0, 1)  # not (previous + 1)


def test_empty_drain_would_block():
    assert EventChannel().drain(blocking=False) is None


def test_blocking_drain_released_by_writer():
    chan = EventChannel()
    got: list[EventBatch] = []

    def reader():
        got.append(chan.drain(blocking=True))

    thread = threading.Thread(target=reader)
    thread.start()
    time.sleep(0.05)  # reader should be parked on the empty counter
    assert thread.is_alive()
    chan.record_block()
    thread.join(timeout=2)
    assert not thread.is_alive()
    assert got == [EventBatch(1, 0)]


def test_blocking_drain_never_returns_zero_batch():
    chan = EventChannel()
    chan.record_unblock()
    batch = chan.drain(blocking=True)
    assert (batch.blocked, batch.unblocked) != (0, 0)


def test_second_blocking_reader_rejected():
    chan = EventChannel()
    started = threading.Event()

    def reader():
        started.set()
        chan.drain(blocking=True)

    thread = threading.Thread(target=reader, daemon=True)
    thread.start()
    started.wait()
    time.sleep(0.05)
    with pytest.raises(BusyReaderError):
        chan.drain(blocking=True)
    chan.record_block()  # release the parked reader
    thread.join(timeout=2)


# ----------------------------------------------------------------------
# Overflow policy
# ----------------------------------------------------------------------
def test_strict_overflow_at_2_32():
    chan = EventChannel()
    chan._packed = pack(HALF_MOD - 1, 0)
    with pytest.raises(CounterOverflowError):
        chan.record_block()
    chan._packed = pack(0, HALF_MOD - 1)
    with pytest.raises(CounterOverflowError):
        chan.record_unblock()


def test_strict_allows_reaching_max():
    chan = EventChannel()
    chan._packed = pack(HALF_MOD - 2, 0)
    chan.record_block()  # reaches 2**32 - 1, still representable
    assert chan.drain() == EventBatch(HALF_MOD - 1, 0)


def test_wrapping_blocked_carry_corrupts_unblocked():
    chan = EventChannel(mode=OverflowMode.WRAPPING)
    chan._packed = pack(HALF_MOD - 1, 5)
    chan.record_block()
    # The low half wrapped to zero and its carry landed in the high half.
    assert chan.drain() == EventBatch(0, 6)


def test_wrapping_unblocked_carry_is_lost():
    chan = EventChannel(mode=OverflowMode.WRAPPING)
    chan._packed = pack(7, HALF_MOD - 1)
    chan.record_unblock()
    assert chan.drain() == EventBatch(7, 0)


# ----------------------------------------------------------------------
# Conservation under concurrency
# ----------------------------------------------------------------------
def test_concurrent_writers_single_reader_conservation():
    chan = EventChannel()
    n_writers, per_writer = 4, 500
    total_blocked = 0
    total_unblocked = 0
    done = threading.Event()

    def writer(seed: int):
        rng = random.Random(seed)
        for _ in range(per_writer):
            if rng.random() < 0.5:
                chan.record_block()
            else:
                chan.record_unblock()

    writers = [threading.Thread(target=writer, args=(i,)) for i in range(n_writers)]

    def reader():
        nonlocal total_blocked, total_unblocked
        while not done.is_set() or chan.nonzero():
            batch = chan.drain(blocking=False)
            if batch is None:
                time.sleep(0.0005)
                continue
            total_blocked += batch.blocked
            total_unblocked += batch.unblocked

    reader_thread = threading.Thread(target=reader)
    reader_thread.start()
    for w in writers:
        w.start()
    for w in writers:
        w.join()
    done.set()
    reader_thread.join(timeout=5)
    assert not reader_thread.is_alive()
    assert total_blocked + total_unblocked == n_writers * per_writer
    # Each writer's choices are reproducible: recount what they recorded.
    expected_blocked = 0
    expected_unblocked = 0
    for i in range(n_writers):
        rng = random.Random(i)
        for _ in range(per_writer):
            if rng.random() < 0.5:
                expected_blocked += 1
            else:
                expected_unblocked += 1
    assert total_blocked == expected_blocked
    assert total_unblocked == expected_unblocked


# ----------------------------------------------------------------------
# wait_any
# ----------------------------------------------------------------------
def test_wait_any_timeout_on_empty_channels():
    chans = [EventChannel(chan_id=i) for i in range(4)]
    start = time.monotonic()
    assert wait_any(chans, timeout_us=1000) == set()
    elapsed = time.monotonic() - start
    assert 0.0005 < elapsed < 0.25  # ~1ms, generous upper bound for slow CI


def test_wait_any_reports_single_ready_channel():
    chans = [EventChannel(chan_id=i) for i in range(4)]
    chans[2].record_block()
    assert wait_any(chans, timeout_us=1000) == {2}


def test_wait_any_reports_multiple_ready_channels_in_one_return():
    chans = [EventChannel(chan_id=i) for i in range(4)]
    chans[0].record_unblock()
    chans[3].record_block()
    assert wait_any(chans, timeout_us=1000) == {0, 3}


def test_wait_any_is_level_triggered_and_does_not_consume():
    chans = [EventChannel(chan_id=i) for i in range(2)]
    chans[1].record_block()
    assert wait_any(chans, timeout_us=1000) == {1}
    assert wait_any(chans, timeout_us=1000) == {1}  # still reported until drained
    assert chans[1].drain() == EventBatch(1, 0)
    assert wait_any(chans, timeout_us=1000) == set()


def test_wait_any_wakes_on_event_from_other_thread():
    chans = [EventChannel(chan_id=i) for i in range(3)]

    def late_writer():
        time.sleep(0.02)
        chans[1].record_unblock()

    thread = threading.Thread(target=late_writer)
    thread.start()
    start = time.monotonic()
    ready = wait_any(chans, timeout_us=2_000_000)
    elapsed = time.monotonic() - start
    thread.join()
    assert ready == {1}
    assert elapsed < 1.0  # woke well before the 2s timeout
