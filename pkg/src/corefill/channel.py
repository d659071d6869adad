"""Per-core block/unblock notification channels.

Each channel holds a single 64-bit counter whose two 32-bit halves count
threads that blocked and unblocked on one core since the last read.  A drain
returns both counts and atomically clears them; draining an empty channel
either parks the caller (blocking mode) or reports "would block".  This is
the eventfd-style contract the kernel-side monitor writes into and the
runtime's leader multiplexes over.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

HALF_BITS = 32
HALF_MOD = 1 << HALF_BITS
_PACK_MOD = 1 << 64

__all__ = [
    "HALF_BITS",
    "HALF_MOD",
    "OverflowMode",
    "EventBatch",
    "CounterOverflowError",
    "BusyReaderError",
    "EventChannel",
    "pack",
    "unpack",
    "wait_any",
]


class OverflowMode(Enum):
    """What to do when a 32-bit half is about to exceed its range.

    STRICT raises before the half wraps.  WRAPPING performs plain 64-bit
    modular arithmetic instead: a full blocked half silently carries into
    the unblocked half, and a full unblocked half drops its carry.  WRAPPING
    exists only to mirror the unchecked-counter behavior of the original
    mechanism; STRICT is the default everywhere.
    """

    STRICT = "strict"
    WRAPPING = "wrapping"


class CounterOverflowError(OverflowError):
    """A 32-bit half reached 2**32 in STRICT mode."""


class BusyReaderError(RuntimeError):
    """A second blocking reader attached to a single-reader channel."""


@dataclass(frozen=True)
class EventBatch:
    """Counts accumulated between two drains of one channel."""

    blocked: int
    unblocked: int

    @property
    def net_ready(self) -> int:
        """Change in ready threads implied by this batch."""
        return self.unblocked - self.blocked


def pack(blocked: int, unblocked: int) -> int:
    """Pack two counts into one 64-bit value (blocked in the low half)."""
    if not 0 <= blocked < HALF_MOD:
        raise CounterOverflowError(f"blocked count {blocked} outside [0, 2**32)")
    if not 0 <= unblocked < HALF_MOD:
        raise CounterOverflowError(f"unblocked count {unblocked} outside [0, 2**32)")
    return (unblocked << HALF_BITS) | blocked


def unpack(packed: int) -> EventBatch:
    """Inverse of :func:`pack`."""
    return EventBatch(blocked=packed & (HALF_MOD - 1), unblocked=packed >> HALF_BITS)


class EventChannel:
    """One core's notification counter.

    Many threads may record events concurrently; at most one blocking reader
    may be parked at a time; any number of non-blocking drains may race with
    all of the above.  Every counter update and the read-and-clear step are
    atomic with respect to each other.
    """

    def __init__(self, chan_id: int = 0, mode: OverflowMode = OverflowMode.STRICT) -> None:
        self.chan_id = chan_id
        self.mode = mode
        self._packed = 0
        self._cond = threading.Condition()
        self._blocking_reader = False
        # Called (outside the lock) whenever the counter leaves zero; used by
        # pollers and by the simulator to wake a waiting leader.
        self._nonzero_watchers: list[Callable[[EventChannel], None]] = []

    # ------------------------------------------------------------------
    # Writer side
    # ------------------------------------------------------------------
    def record_block(self) -> None:
        """Count one thread blocking on this core."""
        self._bump(low=True)

    def record_unblock(self) -> None:
        """Count one thread resuming on this core after a block."""
        self._bump(low=False)

    def _bump(self, low: bool) -> None:
        with self._cond:
            prev = self._packed
            if self.mode is OverflowMode.STRICT:
                half = prev & (HALF_MOD - 1) if low else prev >> HALF_BITS
                if half == HALF_MOD - 1:
                    name = "blocked" if low else "unblocked"
                    raise CounterOverflowError(f"{name} counter would reach 2**32")
                self._packed = prev + (1 if low else HALF_MOD)
            else:
                # Unchecked arithmetic: the low half can carry into the high
                # half, and the high half can drop its carry entirely.
                self._packed = (prev + (1 if low else HALF_MOD)) % _PACK_MOD
            self._cond.notify_all()
            # Watchers fire on the zero -> nonzero edge only.
            watchers = list(self._nonzero_watchers) if prev == 0 and self._packed != 0 else []
        for watcher in watchers:
            watcher(self)

    # ------------------------------------------------------------------
    # Reader side
    # ------------------------------------------------------------------
    def drain(self, blocking: bool = False) -> EventBatch | None:
        """Return and clear the accumulated counts in one indivisible step.

        Non-blocking drains of an empty channel return None (the would-block
        signal, not a failure).  A blocking drain parks until the counter is
        nonzero and therefore never returns a zero batch.
        """
        with self._cond:
            if self._packed == 0:
                if not blocking:
                    return None
                if self._blocking_reader:
                    raise BusyReaderError("channel already has a parked reader")
                self._blocking_reader = True
                try:
                    while self._packed == 0:
                        self._cond.wait()
                finally:
                    self._blocking_reader = False
            batch = unpack(self._packed)
            self._packed = 0
            return batch

    def nonzero(self) -> bool:
        with self._cond:
            return self._packed != 0

    def peek(self) -> EventBatch:
        """Read without clearing; diagnostic only."""
        with self._cond:
            return unpack(self._packed)

    # ------------------------------------------------------------------
    # Multiplexing support
    # ------------------------------------------------------------------
    def add_nonzero_watcher(self, watcher: Callable[[EventChannel], None]) -> None:
        with self._cond:
            self._nonzero_watchers.append(watcher)

    def remove_nonzero_watcher(self, watcher: Callable[[EventChannel], None]) -> None:
        with self._cond:
            self._nonzero_watchers.remove(watcher)

    def __repr__(self) -> str:  # pragma: no cover
        batch = self.peek()
        return f"EventChannel(id={self.chan_id}, blocked={batch.blocked}, unblocked={batch.unblocked})"


def wait_any(channels: Iterable[EventChannel], timeout_us: int = 1000) -> set[int]:
    """Wait until any channel holds events, up to timeout_us.

    Returns the ids of all channels that currently hold a nonzero counter
    (level-triggered; counts are not consumed).  An empty set means the
    timeout elapsed with nothing to report.
    """
    chans = list(channels)
    signal = threading.Condition()

    def _on_nonzero(_: EventChannel) -> None:
        with signal:
            signal.notify_all()

    for chan in chans:
        chan.add_nonzero_watcher(_on_nonzero)
    try:
        deadline = time.monotonic() + timeout_us / 1e6
        with signal:
            # Scanning under the signal lock keeps notify-vs-wait ordered:
            # watchers fire outside any channel lock, so they serialize on
            # `signal` and cannot slip between the scan and the wait.
            while True:
                ready = {chan.chan_id for chan in chans if chan.nonzero()}
                if ready:
                    return ready
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return set()
                signal.wait(remaining)
    finally:
        for chan in chans:
            chan.remove_nonzero_watcher(_on_nonzero)
