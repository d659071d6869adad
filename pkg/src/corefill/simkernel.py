"""Deterministic discrete-event simulator of cores, run queues, and blocking.

Threads are generators yielding :mod:`corefill.effects`; the simulator owns
dispatch, round-robin preemption at timeslice expiry, blocking I/O
completions, optional migrations, and per-core time accounting
(busy / oversubscribed / idle).  Identical (seed, config, workload) always
produces identical traces and metrics: the event queue is ordered by
(time, kind priority, sequence) and all randomness comes from one seeded
generator.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator

from .effects import BlockingOp, Compute, Park
from .monitor import MonitorTable, SchedState

__all__ = [
    "SimConfig",
    "InvalidConfigError",
    "BadCoreError",
    "EventKind",
    "ThreadState",
    "Sim",
]


class InvalidConfigError(ValueError):
    """Simulator configuration failed validation."""


class BadCoreError(ValueError):
    """Core id outside the configured range."""


class EventKind(Enum):
    """Queue event kinds; enum order is the tie-break priority at equal times.

    I/O completions land before timeslice expiries so wake-ups are visible
    to the expiring-slice decision; the leader runs last so one leader pass
    serves every event that fired at that instant.
    """

    IO_COMPLETE = 0
    THREAD_WAKE = 1
    TIMESLICE_EXPIRY = 2
    LEADER_TIMER = 3


@dataclass
class SimConfig:
    n_cores: int
    timeslice_us: int = 1000
    # Probability that a thread changes core when it wakes from a blocking
    # op, and that a preempted thread is re-queued on another core.  0 keeps
    # every thread where it was.
    migration_prob: float = 0.0
    rng_seed: int = 0
    trace: bool = False
    io_jitter_frac: float = 0.0

    def validate(self) -> None:
        if self.n_cores < 1:
            raise InvalidConfigError(f"n_cores must be >= 1, got {self.n_cores}")
        if self.timeslice_us <= 0:
            raise InvalidConfigError(f"timeslice_us must be > 0, got {self.timeslice_us}")
        if not 0.0 <= self.migration_prob <= 1.0:
            raise InvalidConfigError(f"migration_prob must be in [0, 1], got {self.migration_prob}")
        if not 0.0 <= self.io_jitter_frac < 1.0:
            raise InvalidConfigError(f"io_jitter_frac must be in [0, 1), got {self.io_jitter_frac}")


class ThreadState(Enum):
    READY = "ready"
    RUNNING = "running"
    BLOCKED = "blocked"
    PARKED = "parked"
    DONE = "done"


@dataclass
class _SimThread:
    tid: int
    body: Iterator[object]
    state: ThreadState
    core: int
    remaining_compute: int = 0
    run_start: int = 0
    # Quantum granted at dispatch; crossing it with competitors waiting
    # preempts regardless of where the thread is in its compute effects.
    slice_deadline: int = 0
    # True when the next dispatch follows a genuine block (I/O or park).
    woke_from_block: bool = False


@dataclass
class _Core:
    running: int | None = None
    queue: deque[int] = field(default_factory=deque)
    slice_epoch: int = 0
    busy_us: int = 0
    oversub_us: int = 0
    idle_us: int = 0
    context_switches: int = 0


class Sim:
    """Single-threaded event loop over virtual microseconds."""

    def __init__(self, config: SimConfig, monitor: MonitorTable | None = None) -> None:
        config.validate()
        if monitor is not None and monitor.n_cores != config.n_cores:
            raise InvalidConfigError("monitor table core count differs from sim config")
        self.config = config
        self.monitor = monitor
        self.now = 0
        self.rng = random.Random(config.rng_seed)
        self.threads: dict[int, _SimThread] = {}
        self.cores = [_Core() for _ in range(config.n_cores)]
        self.trace_records: list[dict] = []
        self._heap: list[tuple[int, int, int, tuple]] = []
        self._seq = 0
        self._next_tid = 1
        self._last_event_time = 0
        # Leader hook: callback plus period; one immediate wake may be
        # pending at a time to coalesce bursts of channel activity.
        self._leader_cb: Callable[[], None] | None = None
        self._leader_period = 0
        self._leader_stopped = False
        self._leader_wake_pending = False
        if monitor is not None and monitor.tracer is None:
            monitor.tracer = self._monitor_trace

    # ------------------------------------------------------------------
    # Construction API
    # ------------------------------------------------------------------
    def spawn(self, core: int, body: Iterator[object]) -> int:
        """Add a runnable thread to `core`'s queue (woken at current time)."""
        self._check_core(core)
        tid = self._alloc_tid()
        self.threads[tid] = _SimThread(tid, body, ThreadState.READY, core)
        self._push(EventKind.THREAD_WAKE, (tid, core))
        return tid

    def spawn_parked(self, core: int, body: Iterator[object]) -> int:
        """Add a thread that starts blocked and runs only once unparked."""
        self._check_core(core)
        tid = self._alloc_tid()
        self.threads[tid] = _SimThread(tid, body, ThreadState.PARKED, core)
        return tid

    def unpark(self, tid: int, core: int | None = None) -> None:
        """Wake a parked thread, optionally onto a different core."""
        thread = self.threads[tid]
        if thread.state is not ThreadState.PARKED:
            raise ValueError(f"thread {tid} is {thread.state.value}, not parked")
        target = thread.core if core is None else core
        self._check_core(target)
        thread.woke_from_block = True
        self._push(EventKind.THREAD_WAKE, (tid, target))

    def set_leader(self, callback: Callable[[], None], period_us: int) -> None:
        """Install the periodic leader callback; also fired on channel events.

        The leader gets one immediate kick at the current time (startup
        pass) and then runs every period_us.
        """
        if period_us <= 0:
            raise InvalidConfigError("leader period must be > 0")
        self._leader_cb = callback
        self._leader_period = period_us
        self._push(EventKind.LEADER_TIMER, ("event",))
        self._leader_wake_pending = True
        self._push(EventKind.LEADER_TIMER, ("periodic",), at=self.now + period_us)
        if self.monitor is not None:
            for chan in self.monitor.channels:
                chan.add_nonzero_watcher(self._on_channel_nonzero)

    def stop_leader(self) -> None:
        """Stop rescheduling leader events; pending ones become no-ops."""
        self._leader_stopped = True

    def _alloc_tid(self) -> int:
        tid = self._next_tid
        self._next_tid += 1
        return tid

    def _check_core(self, core: int) -> None:
        if not 0 <= core < self.config.n_cores:
            raise BadCoreError(f"core {core} out of range [0, {self.config.n_cores})")

    # ------------------------------------------------------------------
    # Event queue
    # ------------------------------------------------------------------
    def _push(self, kind: EventKind, payload: tuple, at: int | None = None) -> None:
        when = self.now if at is None else at
        heapq.heappush(self._heap, (when, kind.value, self._seq, (kind, payload)))
        self._seq += 1

    def _on_channel_nonzero(self, _chan) -> None:
        self.poke_leader()

    def poke_leader(self) -> None:
        """Schedule an immediate leader pass (deduplicated per instant)."""
        if self._leader_stopped or self._leader_wake_pending:
            return
        self._leader_wake_pending = True
        self._push(EventKind.LEADER_TIMER, ("event",))

    # ------------------------------------------------------------------
    # Run loop
    # ------------------------------------------------------------------
    def run_until(self, t: int) -> None:
        """Dispatch every event with time <= t and account time up to t."""
        if t < self.now:
            raise ValueError(f"cannot run backwards: now={self.now}, asked {t}")
        while self._heap and self._heap[0][0] <= t:
            self._step()
        self._account_to(t)

    def run(self, max_time_us: int | None = None) -> None:
        """Dispatch until the event queue drains (or max_time_us is hit)."""
        while self._heap:
            if max_time_us is not None and self._heap[0][0] > max_time_us:
                self._account_to(max_time_us)
                return
            self._step()

    def _step(self) -> None:
        when, _prio, _seq, (kind, payload) = heapq.heappop(self._heap)
        self._account_to(when)
        if kind is EventKind.IO_COMPLETE:
            self._handle_io_complete(*payload)
        elif kind is EventKind.THREAD_WAKE:
            self._handle_wake(*payload)
        elif kind is EventKind.TIMESLICE_EXPIRY:
            self._handle_slice(*payload)
        else:
            self._handle_leader(*payload)

    def _account_to(self, t: int) -> None:
        delta = t - self.now
        if delta < 0:
            raise AssertionError("event queue went backwards")
        if delta > 0:
            for core_id, core in enumerate(self.cores):
                occupancy = self._monitored_occupancy(core_id)
                if occupancy >= 2:
                    core.oversub_us += delta
                elif core.running is not None or core.queue:
                    core.busy_us += delta
                else:
                    core.idle_us += delta
        self.now = t

    # ------------------------------------------------------------------
    # Handlers
    # ------------------------------------------------------------------
    def _handle_io_complete(self, tid: int) -> None:
        thread = self.threads[tid]
        assert thread.state is ThreadState.BLOCKED
        target = thread.core
        if self.config.migration_prob > 0 and self.rng.random() < self.config.migration_prob:
            target = self.rng.randrange(self.config.n_cores)
        thread.woke_from_block = True
        self._enqueue_ready(thread, target, why="io")

    def _handle_wake(self, tid: int, core: int) -> None:
        thread = self.threads[tid]
        if thread.state not in (ThreadState.READY, ThreadState.PARKED):
            return  # stale wake for a thread that moved on
        if thread.state is ThreadState.READY and thread.tid in self.cores[thread.core].queue:
            return
        self._enqueue_ready(thread, core, why="wake")

    def _enqueue_ready(self, thread: _SimThread, core: int, why: str) -> None:
        moved_from = thread.core if thread.core != core else None
        thread.core = core
        thread.state = ThreadState.READY
        self.cores[core].queue.append(thread.tid)
        if moved_from is not None:
            self._trace("migrate", core, thread.tid, src=moved_from,
                        occ_from=self._monitored_occupancy(moved_from))
        self._trace("wake", core, thread.tid, why=why)
        if self.cores[core].running is None:
            self._dispatch(core)

    def _handle_slice(self, core_id: int, epoch: int) -> None:
        core = self.cores[core_id]
        if core.running is None or core.slice_epoch != epoch:
            return  # the slice this timer was armed for already ended
        thread = self.threads[core.running]
        used = self.now - thread.run_start
        thread.remaining_compute -= used
        thread.run_start = self.now
        if thread.remaining_compute <= 0:
            self._advance(thread)
        elif self.now >= thread.slice_deadline and core.queue:
            self._preempt(core_id, thread)
        else:
            if self.now >= thread.slice_deadline:
                # Nobody is waiting: the expiry is a no-op, fresh quantum.
                thread.slice_deadline = self.now + self.config.timeslice_us
            self._arm_slice(core_id, thread)

    def _preempt(self, core_id: int, thread: _SimThread) -> None:
        """Round-robin: the running thread yields the core to the queue head."""
        core = self.cores[core_id]
        core.running = None
        target = core_id
        if self.config.migration_prob > 0 and self.rng.random() < self.config.migration_prob:
            target = self.rng.randrange(self.config.n_cores)
        thread.state = ThreadState.READY
        thread.woke_from_block = False
        if self.monitor is not None and thread.tid in self.monitor.threads:
            self.monitor.on_switch_out(thread.tid, SchedState.READY)
        thread.core = target
        self.cores[target].queue.append(thread.tid)
        if target != core_id:
            self._trace("migrate", target, thread.tid, src=core_id,
                        occ_from=self._monitored_occupancy(core_id))
        self._dispatch(core_id)
        if target != core_id and self.cores[target].running is None:
            self._dispatch(target)

    def _handle_leader(self, reason: str) -> None:
        if reason == "event":
            self._leader_wake_pending = False
        if self._leader_stopped or self._leader_cb is None:
            return
        self._leader_cb()
        if reason == "periodic" and not self._leader_stopped:
            self._push(EventKind.LEADER_TIMER, ("periodic",), at=self.now + self._leader_period)

    # ------------------------------------------------------------------
    # Dispatch and thread advancement
    # ------------------------------------------------------------------
    def _dispatch(self, core_id: int) -> None:
        core = self.cores[core_id]
        while core.running is None and core.queue:
            tid = core.queue.popleft()
            thread = self.threads[tid]
            core.running = tid
            thread.state = ThreadState.RUNNING
            thread.core = core_id
            was_blocked = thread.woke_from_block
            thread.woke_from_block = False
            if self.monitor is not None and tid in self.monitor.threads:
                self.monitor.on_switch_in(tid, was_blocked, core_id)
            core.context_switches += 1
            self._trace("dispatch", core_id, tid)
            thread.slice_deadline = self.now + self.config.timeslice_us
            if thread.remaining_compute > 0:
                thread.run_start = self.now
                self._arm_slice(core_id, thread)
            else:
                self._advance(thread)

    def _arm_slice(self, core_id: int, thread: _SimThread) -> None:
        core = self.cores[core_id]
        core.slice_epoch += 1
        horizon_end = min(self.now + thread.remaining_compute, thread.slice_deadline)
        self._push(EventKind.TIMESLICE_EXPIRY, (core_id, core.slice_epoch),
                   at=max(self.now, horizon_end))

    def _advance(self, thread: _SimThread) -> None:
        """Pull the thread's next effect; it is running and owes no compute."""
        core_id = thread.core
        core = self.cores[core_id]
        while True:
            try:
                effect = next(thread.body)
            except StopIteration:
                thread.state = ThreadState.DONE
                core.running = None
                if self.monitor is not None and thread.tid in self.monitor.threads:
                    self.monitor.on_exit(thread.tid)
                self._dispatch(core_id)
                return
            if isinstance(effect, Compute):
                if effect.duration_us <= 0:
                    continue
                thread.remaining_compute = effect.duration_us
                thread.run_start = self.now
                self._arm_slice(core_id, thread)
                return
            if isinstance(effect, BlockingOp):
                thread.state = ThreadState.BLOCKED
                core.running = None
                if self.monitor is not None and thread.tid in self.monitor.threads:
                    self.monitor.on_switch_out(thread.tid, SchedState.BLOCKED)
                duration = self._io_duration(effect.duration_us)
                self._push(EventKind.IO_COMPLETE, (thread.tid,), at=self.now + duration)
                self._dispatch(core_id)
                return
            if isinstance(effect, Park):
                thread.state = ThreadState.PARKED
                core.running = None
                if self.monitor is not None and thread.tid in self.monitor.threads:
                    self.monitor.on_switch_out(thread.tid, SchedState.BLOCKED)
                self._dispatch(core_id)
                return
            raise TypeError(f"thread {thread.tid} yielded unknown effect {effect!r}")

    def _io_duration(self, duration_us: int) -> int:
        if self.config.io_jitter_frac <= 0:
            return duration_us
        spread = self.config.io_jitter_frac * (2 * self.rng.random() - 1)
        return max(1, round(duration_us * (1 + spread)))

    # ------------------------------------------------------------------
    # Introspection for oracles, metrics, and traces
    # ------------------------------------------------------------------
    def _monitored_occupancy(self, core_id: int) -> int:
        """Monitored threads currently ready-or-running on this core."""
        if self.monitor is None:
            return 0
        core = self.cores[core_id]
        count = 0
        if core.running is not None and self._is_monitored(core.running):
            count += 1
        for tid in core.queue:
            if self._is_monitored(tid):
                count += 1
        return count

    def _is_monitored(self, tid: int) -> bool:
        record = self.monitor.threads.get(tid) if self.monitor else None
        return record is not None and record.monitored

    def ready_or_running(self, core_id: int) -> int:
        """Ground truth thread count on a core's run queue (plus running)."""
        core = self.cores[core_id]
        return len(core.queue) + (1 if core.running is not None else 0)

    def monitored_ready_or_running(self, core_id: int) -> int:
        return self._monitored_occupancy(core_id)

    def core_times(self) -> list[tuple[int, int, int]]:
        """Per-core (busy, oversubscribed, idle), summing to `now`."""
        return [(c.busy_us, c.oversub_us, c.idle_us) for c in self.cores]

    def context_switches(self) -> list[int]:
        return [c.context_switches for c in self.cores]

    def pending_events(self) -> int:
        return len(self._heap)

    # ------------------------------------------------------------------
    # Trace
    # ------------------------------------------------------------------
    def _monitor_trace(self, kind: str, core: int, tid: int, **extra: object) -> None:
        self._trace(kind, core, tid, **extra)

    def trace_hook(self, kind: str, core: int, tid: int, **extra: object) -> None:
        """Entry point for runtime-level records (wake decisions, surrenders)."""
        self._trace(kind, core, tid, **extra)

    def _trace(self, kind: str, core: int, tid: int, **extra: object) -> None:
        if not self.config.trace:
            return
        payload = dict(extra)
        payload["occ"] = self._monitored_occupancy(core)
        self.trace_records.append(
            {"t": self.now, "core": core, "tid": tid, "kind": kind, "extra": payload}
        )
