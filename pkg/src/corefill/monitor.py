"""Context-switch event policy: when to report blocks, unblocks, migrations.

This is the pure decision layer that the real kernel patch would run inside
its context-switch wrapper.  Both the deterministic simulator and the live
(thread-based) runtime call the same hooks: switch-out with the reason for
leaving the core, switch-in with whether the thread had been blocked.  Only
monitored threads write the per-core channels; preemptions are deliberately
invisible; a thread that was preempted on one core and resumes on another
gets its missed block written back to the old core.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .channel import EventChannel, OverflowMode

__all__ = [
    "SchedState",
    "ThreadRecord",
    "MonitorContext",
    "MonitorTable",
    "AlreadyEnabledError",
    "UnknownThreadError",
    "enable_monitoring",
]

# tracer(kind, core, tid, **extra); kind is "block" or "unblock"
Tracer = Callable[..., None]


class SchedState(Enum):
    RUNNING = "running"
    READY = "ready"
    BLOCKED = "blocked"
    DEAD = "dead"


class AlreadyEnabledError(RuntimeError):
    """Monitoring was already enabled for this context."""


class UnknownThreadError(KeyError):
    """Thread id has no record in the monitor table."""


@dataclass
class ThreadRecord:
    """One monitored (or monitorable) thread as the switch hooks see it."""

    thread_id: int
    sched_state: SchedState
    core: int
    last_core: int
    monitored: bool = False
    # True only while the thread's most recent switch-out was a preemption;
    # a later switch-in on a different core owes the old core a block event.
    missed_block_pending: bool = False
    # Debug guard for the alternation invariant; "block"/"unblock"/None.
    _last_event: str | None = field(default=None, repr=False)


class MonitorContext:
    """Stand-in for the per-process kernel context that owns the channels."""

    def __init__(self) -> None:
        self.table: MonitorTable | None = None


def enable_monitoring(
    context: MonitorContext,
    n_cores: int,
    mode: OverflowMode = OverflowMode.STRICT,
) -> MonitorTable:
    """Create one zeroed channel per core and attach the table to `context`.

    Enabling twice on the same context is an error rather than a no-op so
    that wiring bugs surface immediately.
    """
    if n_cores < 1:
        raise ValueError(f"n_cores must be >= 1, got {n_cores}")
    if context.table is not None:
        raise AlreadyEnabledError("monitoring already enabled for this context")
    table = MonitorTable(n_cores, mode=mode)
    context.table = table
    return table


class MonitorTable:
    """Per-core channels plus the thread records the switch hooks consult."""

    def __init__(self, n_cores: int, mode: OverflowMode = OverflowMode.STRICT) -> None:
        if n_cores < 1:
            raise ValueError(f"n_cores must be >= 1, got {n_cores}")
        self.n_cores = n_cores
        self.channels: list[EventChannel] = [
            EventChannel(chan_id=core, mode=mode) for core in range(n_cores)
        ]
        self.threads: dict[int, ThreadRecord] = {}
        self.enabled = True
        self.tracer: Tracer | None = None
        # Totals of events actually written, for conservation checks and the
        # end-of-run report.
        self.blocked_emitted = [0] * n_cores
        self.unblocked_emitted = [0] * n_cores

    # ------------------------------------------------------------------
    # Thread registry
    # ------------------------------------------------------------------
    def add_thread(self, thread_id: int, core: int, born_blocked: bool = False) -> ThreadRecord:
        """Create the record for a thread before it can be registered.

        born_blocked marks threads that enter the system parked (pool
        workers); their first observable event is the unblock of their first
        wake-up.  Threads added while runnable emit a block first.
        """
        if thread_id in self.threads:
            raise ValueError(f"thread {thread_id} already tracked")
        if not 0 <= core < self.n_cores:
            raise ValueError(f"core {core} out of range")
        record = ThreadRecord(
            thread_id=thread_id,
            sched_state=SchedState.BLOCKED if born_blocked else SchedState.READY,
            core=core,
            last_core=core,
        )
        self.threads[thread_id] = record
        return record

    def register_thread(self, thread_id: int, enable: bool = True) -> None:
        """Toggle monitoring; unmonitored threads never write the channels."""
        record = self._record(thread_id)
        if record.monitored != enable:
            record.monitored = enable
            # Toggling creates gaps in the event stream; restart the
            # alternation guard rather than flag a false violation.
            record._last_event = None

    def _record(self, thread_id: int) -> ThreadRecord:
        try:
            return self.threads[thread_id]
        except KeyError:
            raise UnknownThreadError(thread_id) from None

    # ------------------------------------------------------------------
    # Switch hooks
    # ------------------------------------------------------------------
    def on_switch_out(self, thread_id: int, next_state: SchedState) -> None:
        """The thread is leaving its core; next_state says why.

        Blocking writes the core's blocked counter.  Preemption (READY)
        writes nothing but arms the missed-block flag so a later cross-core
        resume can compensate.
        """
        record = self._record(thread_id)
        if record.sched_state is not SchedState.RUNNING:
            raise ValueError(
                f"thread {thread_id} switched out while {record.sched_state.value}"
            )
        if next_state is SchedState.BLOCKED:
            record.missed_block_pending = False
            if record.monitored:
                self._emit("block", record.core, thread_id)
        elif next_state is SchedState.READY:
            # Preempted: the core does not go idle, so nothing is reported.
            record.missed_block_pending = True
        else:
            raise ValueError(f"invalid switch-out target {next_state}")
        record.last_core = record.core
        record.sched_state = next_state

    def on_switch_in(self, thread_id: int, was_blocked: bool, now_on_core: int) -> None:
        """The thread was picked to run on now_on_core.

        Migration compensation runs first, then the unblock (if the thread
        had genuinely blocked) lands on the new core.
        """
        record = self._record(thread_id)
        if record.last_core != now_on_core:
            self.on_migration_check(thread_id, now_on_core)
        if was_blocked and record.monitored:
            self._emit("unblock", now_on_core, thread_id)
        record.core = now_on_core
        record.last_core = now_on_core
        record.sched_state = SchedState.RUNNING
        record.missed_block_pending = False

    def on_migration_check(self, thread_id: int, new_core: int) -> None:
        """Settle the books when a thread resumes on a different core.

        Only a thread that left its previous core in the preempted state owes
        that core a block event (it is still counted as present there); the
        matching unblock goes to the new core.  A thread that actually
        blocked already paid on the old core.
        """
        record = self._record(thread_id)
        if record.last_core == new_core:
            return
        if record.missed_block_pending and record.monitored:
            self._emit("block", record.last_core, thread_id, compensation=True)
            self._emit("unblock", new_core, thread_id, compensation=True)
        record.missed_block_pending = False

    def on_exit(self, thread_id: int) -> None:
        """The thread terminated; no event is written for exits."""
        record = self._record(thread_id)
        record.sched_state = SchedState.DEAD

    # ------------------------------------------------------------------
    # Emission
    # ------------------------------------------------------------------
    def _emit(self, kind: str, core: int, thread_id: int, **extra: object) -> None:
        record = self.threads[thread_id]
        assert record._last_event != kind, (
            f"thread {thread_id} emitted two '{kind}' events in a row"
        )
        record._last_event = kind
        if kind == "block":
            self.channels[core].record_block()
            self.blocked_emitted[core] += 1
        else:
            self.channels[core].record_unblock()
            self.unblocked_emitted[core] += 1
        if self.tracer is not None:
            self.tracer(kind, core, thread_id, **extra)

    # ------------------------------------------------------------------
    # Helpers for oracles and reports
    # ------------------------------------------------------------------
    def emitted_totals(self) -> tuple[int, int]:
        return sum(self.blocked_emitted), sum(self.unblocked_emitted)

    def monitored_ids(self) -> set[int]:
        return {tid for tid, rec in self.threads.items() if rec.monitored}
