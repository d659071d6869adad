"""Task runtime: leader thread logic, per-core ready ledgers, worker pool.

The leader multiplexes every core's notification channel, folds drained
event counts into per-core ready counters, and wakes (or spawns) an idle
worker for any core whose counter says no monitored thread is runnable
there while dispatchable tasks remain.  Workers check those counters at
task scheduling points and voluntarily surrender their core when more than
one ready thread is bound to it.  The same logic drives both the simulator
(workers as generators inside the event loop) and real threads.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

from .channel import EventBatch, EventChannel
from .effects import BlockingOp, Compute, Park
from .monitor import MonitorContext, MonitorTable, enable_monitoring
from .simkernel import Sim, SimConfig
from .tasks import PHASE_COMPUTE, PHASE_IO, PHASE_YIELD, Task, TaskGraph

__all__ = [
    "RuntimeConfig",
    "ConfigError",
    "StalledError",
    "CoreLedger",
    "Worker",
    "WorkerPool",
    "CheckResult",
    "TaskRuntime",
    "SimRun",
    "start_sim_run",
]


class ConfigError(ValueError):
    """Invalid runtime configuration or graph."""


class StalledError(RuntimeError):
    """Liveness tripwire: tasks remain but nothing can make progress."""


class CheckResult(Enum):
    CONTINUE = "continue"
    SURRENDER = "surrender"


@dataclass
class RuntimeConfig:
    umt_enabled: bool = True
    leader_timeout_us: int = 1000
    max_workers_per_core: int = 8
    # Fault injection: hold each worker-side drained batch for this long
    # before folding it into the ledger (0 disables).  Models the window
    # between reading a channel and updating the shared counter.
    stale_fold_delay_us: int = 0

    def validate(self) -> None:
        if self.leader_timeout_us <= 0:
            raise ConfigError("leader_timeout_us must be > 0")
        if self.max_workers_per_core < 1:
            raise ConfigError("max_workers_per_core must be >= 1")
        if self.stale_fold_delay_us < 0:
            raise ConfigError("stale_fold_delay_us must be >= 0")


class CoreLedger:
    """User-held ready-thread counter for one core.

    Starts at the number of workers initially bound to the core; every drain
    of the core's channel folds (unblocked - blocked) in.  The value may be
    transiently stale or negative; at quiescence with all channels drained
    it matches ground truth.
    """

    def __init__(self, core: int, channel: EventChannel | None, initial: int) -> None:
        self.core = core
        self.channel = channel
        self.ready_count = initial
        self._lock = threading.Lock()

    def fold(self, batch: EventBatch) -> None:
        with self._lock:
            self.ready_count += batch.net_ready

    def drain_and_fold(self) -> EventBatch | None:
        """Non-blocking drain folded atomically; None when nothing pending."""
        if self.channel is None:
            return None
        batch = self.channel.drain(blocking=False)
        if batch is not None:
            self.fold(batch)
        return batch


@dataclass
class Worker:
    wid: int
    bound_core: int
    born_blocked: bool
    tid: int | None = None  # simulator thread id or OS ident
    # Live mode only: the parked worker waits on this.
    wake_event: threading.Event = field(default_factory=threading.Event, repr=False)


class WorkerPool:
    """Idle workers, LIFO, plus the spawn budget."""

    def __init__(self, max_workers: int) -> None:
        self.max_workers = max_workers
        self._idle: list[Worker] = []
        self._lock = threading.Lock()
        self.spawned_total = 0
        self.bound_core: dict[int, int] = {}

    def note_spawn(self, worker: Worker) -> None:
        with self._lock:
            self.spawned_total += 1
            self.bound_core[worker.wid] = worker.bound_core

    def can_spawn(self) -> bool:
        with self._lock:
            return self.spawned_total < self.max_workers

    def push(self, worker: Worker) -> None:
        with self._lock:
            self._idle.append(worker)

    def pop(self) -> Worker | None:
        with self._lock:
            return self._idle.pop() if self._idle else None

    def pop_all(self) -> list[Worker]:
        with self._lock:
            drained, self._idle = self._idle, []
            return drained

    def rebind(self, worker: Worker, core: int) -> None:
        worker.bound_core = core
        with self._lock:
            self.bound_core[worker.wid] = core

    def idle_count(self) -> int:
        with self._lock:
            return len(self._idle)


class TaskRuntime:
    """Engine-independent runtime state and decision logic.

    An engine adapter supplies `now_us()`, `make_worker(core, born_blocked)`
    and `wake_worker(worker, core)`; everything else (leader arithmetic,
    scheduling-point checks, task dispatch, shutdown, liveness) lives here.
    """

    def __init__(
        self,
        config: RuntimeConfig,
        n_cores: int,
        graph: TaskGraph,
        monitor: MonitorTable | None,
    ) -> None:
        config.validate()
        if n_cores < 1:
            raise ConfigError("n_cores must be >= 1")
        if config.umt_enabled and monitor is None:
            raise ConfigError("umt_enabled requires an enabled monitor table")
        self.config = config
        self.n_cores = n_cores
        self.graph = graph
        self.monitor = monitor
        channels = monitor.channels if monitor is not None else [None] * n_cores
        # Workers are born parked and enter the books through their wake-up
        # unblocks, so the counters start from zero.
        self.ledgers = [CoreLedger(core, channels[core], initial=0) for core in range(n_cores)]
        self.pool = WorkerPool(max_workers=config.max_workers_per_core * n_cores)
        self.workers: dict[int, Worker] = {}
        self._next_wid = 1
        self.engine = None  # set by the driver before anything runs
        self.shutdown = False
        self.finished = False
        self.stalled: str | None = None
        self.leader_wakeups = 0
        self.surrenders = 0
        self.tasks_completed = 0
        self.completed_at_us = 0
        self.quiescent_ledgers: list[int] | None = None
        self._pending_folds: list[tuple[int, int, EventBatch]] = []
        self._state_lock = threading.Lock()

    # ------------------------------------------------------------------
    # Worker management
    # ------------------------------------------------------------------
    def alloc_worker(self, core: int, born_blocked: bool) -> Worker:
        with self._state_lock:
            wid = self._next_wid
            self._next_wid += 1
        worker = Worker(wid=wid, bound_core=core, born_blocked=born_blocked)
        self.workers[wid] = worker
        self.pool.note_spawn(worker)
        return worker

    # ------------------------------------------------------------------
    # Worker-side scheduling points
    # ------------------------------------------------------------------
    def oversubscription_check(self, worker: Worker) -> CheckResult:
        """Refresh this core's counter and decide whether to surrender.

        Runs a non-blocking drain of the worker's own core channel, folds it
        into the ledger (possibly delayed under fault injection), and
        surrenders iff more than one ready thread is bound to the core.
        """
        if not self.config.umt_enabled:
            return CheckResult.CONTINUE
        ledger = self.ledgers[worker.bound_core]
        if self.config.stale_fold_delay_us > 0 and ledger.channel is not None:
            batch = ledger.channel.drain(blocking=False)
            if batch is not None:
                apply_at = self.engine.now_us() + self.config.stale_fold_delay_us
                with self._state_lock:
                    self._pending_folds.append((apply_at, worker.bound_core, batch))
        else:
            ledger.drain_and_fold()
        if ledger.ready_count > 1:
            return CheckResult.SURRENDER
        return CheckResult.CONTINUE

    def apply_matured_folds(self) -> None:
        now = self.engine.now_us()
        with self._state_lock:
            ready = [f for f in self._pending_folds if f[0] <= now]
            self._pending_folds = [f for f in self._pending_folds if f[0] > now]
        for _, core, batch in ready:
            self.ledgers[core].fold(batch)

    def has_pending_folds(self) -> bool:
        with self._state_lock:
            return bool(self._pending_folds)

    def take_task(self) -> Task | None:
        return self.graph.take()

    def complete_task(self, task: Task) -> None:
        freed = self.graph.complete(task.task_id)
        with self._state_lock:
            self.tasks_completed += 1
        if self.graph.remaining() == 0:
            # Makespan is the last completion, not the later moment the
            # leader notices quiescence (its polling adds up to one period).
            self.completed_at_us = self.engine.now_us()
        if freed > 0 and self.pool.idle_count() > 0:
            # Freed work with idle workers parked: nudge the leader now
            # instead of leaving the cores dark until its next periodic scan.
            self.engine.poke_leader()

    def note_surrender(self, worker: Worker) -> None:
        with self._state_lock:
            self.surrenders += 1
        self.engine.trace("surrender", worker.bound_core, worker.wid)

    # ------------------------------------------------------------------
    # Leader
    # ------------------------------------------------------------------
    def leader_iteration(self) -> None:
        """One pass of the leader: drain, fold, wake idle cores, and
        detect completion or a stall."""
        with self._state_lock:
            self.leader_wakeups += 1
        if self.shutdown:
            return
        self.apply_matured_folds()
        if self.config.umt_enabled:
            for ledger in self.ledgers:
                ledger.drain_and_fold()
            self._wake_idle_cores()
        else:
            self._baseline_wake()
        self._check_completion()

    def _wake_idle_cores(self) -> None:
        budget = self.graph.dispatchable_count()
        if budget <= 0:
            return
        for ledger in self.ledgers:
            if budget <= 0:
                break
            if ledger.ready_count > 0:
                continue
            worker = self.pool.pop()
            if worker is None:
                if not self.pool.can_spawn():
                    continue
                worker = self.engine.make_worker(ledger.core, born_blocked=True)
            self.pool.rebind(worker, ledger.core)
            self.engine.trace("wake", ledger.core, worker.wid, why="leader")
            self.engine.wake_worker(worker, ledger.core)
            budget -= 1

    def _baseline_wake(self) -> None:
        # One worker per core, ever: only that core's own parked worker may
        # be woken, and only while dispatchable tasks exist.
        if self.graph.dispatchable_count() <= 0:
            return
        for worker in self.pool.pop_all():
            self.engine.trace("wake", worker.bound_core, worker.wid, why="leader")
            self.engine.wake_worker(worker, worker.bound_core)

    def _check_completion(self) -> None:
        all_parked = self.pool.idle_count() == len(self.workers)
        if not all_parked or self.has_pending_folds():
            return
        if self.graph.remaining() == 0:
            self._finish()
        elif self.graph.dispatchable_count() == 0:
            # Every worker is parked, nothing is dispatchable, nothing is in
            # flight: no event can ever arrive.  This must never happen.
            self.stalled = (
                f"{self.graph.remaining()} tasks remain but all "
                f"{len(self.workers)} workers are parked with nothing dispatchable"
            )
            self.shutdown = True
            self._release_parked_for_exit()
            self.finished = True
            self.engine.on_finished()

    def _finish(self) -> None:
        # Final sweep so the quiescence snapshot sees every event, then wake
        # everyone for exit.
        if self.config.umt_enabled:
            for ledger in self.ledgers:
                ledger.drain_and_fold()
        self.quiescent_ledgers = [ledger.ready_count for ledger in self.ledgers]
        self.shutdown = True
        self._release_parked_for_exit()
        self.finished = True
        self.engine.on_finished()

    def _release_parked_for_exit(self) -> None:
        # Monitoring stops before the exit wake: teardown is bookkeeping-
        # silent, so every worker's last recorded event stays its final park
        # and blocked/unblocked totals balance.
        for worker in self.pool.pop_all():
            if self.monitor is not None and worker.tid in self.monitor.threads:
                self.monitor.register_thread(worker.tid, False)
            self.engine.wake_worker(worker, worker.bound_core)

    def force_stall(self, reason: str) -> None:
        """External liveness watchdog tripped: shut down and report."""
        self.stalled = reason
        self.shutdown = True
        self._release_parked_for_exit()
        self.finished = True
        self.engine.on_finished()

    def final_sweep(self) -> None:
        """Collect any events recorded after shutdown."""
        if self.config.umt_enabled:
            for ledger in self.ledgers:
                ledger.drain_and_fold()


def worker_body(worker: Worker, rt: TaskRuntime) -> Iterator[object]:
    """Worker loop, engine-neutral: yields effects, never touches threads.

    Scheduling points (loop top, yield markers between task phases) refresh
    the core ledger; a surrender or an empty task queue parks the worker in
    the idle pool until the leader wakes it.
    """
    while True:
        if rt.shutdown:
            return
        check = rt.oversubscription_check(worker)
        if check is CheckResult.SURRENDER:
            rt.note_surrender(worker)
            rt.pool.push(worker)
            yield Park()
            continue
        task = rt.take_task()
        if task is None:
            rt.pool.push(worker)
            yield Park()
            continue
        for phase in task.phases():
            if phase[0] == PHASE_COMPUTE:
                yield Compute(phase[1])
            elif phase[0] == PHASE_IO:
                yield BlockingOp(phase[2], kind=phase[1])
            elif phase[0] == PHASE_YIELD:
                # Extra scheduling point; a positive check takes effect at
                # the next loop top (workers finish their task first).
                rt.oversubscription_check(worker)
        rt.complete_task(task)


class SimRun:
    """One simulated run: wires a Sim, a monitor table, and the runtime."""

    def __init__(
        self,
        config: RuntimeConfig,
        sim_config: SimConfig,
        graph: TaskGraph,
        workload_id: str = "",
    ) -> None:
        self.workload_id = workload_id
        if sim_config.migration_prob > 0:
            # Runtime workers are pinned to their bound core; kernel-style
            # migrations only apply to free-standing simulated threads.
            raise ConfigError("runtime simulations require migration_prob == 0")
        monitor: MonitorTable | None = None
        if config.umt_enabled:
            self.context = MonitorContext()
            monitor = enable_monitoring(self.context, sim_config.n_cores)
        self.sim = Sim(sim_config, monitor=monitor)
        self.rt = TaskRuntime(config, sim_config.n_cores, graph, monitor)
        self.rt.engine = self
        # One worker bound per core, born parked in the idle pool; the
        # leader's startup pass wakes them through the ordinary path.
        for core in range(sim_config.n_cores):
            worker = self.make_worker(core, born_blocked=True)
            self.rt.pool.push(worker)
        self.sim.set_leader(self.rt.leader_iteration, config.leader_timeout_us)

    # --- engine interface used by TaskRuntime -------------------------
    def now_us(self) -> int:
        return self.sim.now

    def make_worker(self, core: int, born_blocked: bool) -> Worker:
        worker = self.rt.alloc_worker(core, born_blocked=born_blocked)
        tid = self.sim.spawn_parked(core, worker_body(worker, self.rt))
        worker.tid = tid
        if self.rt.monitor is not None:
            self.rt.monitor.add_thread(tid, core, born_blocked=True)
            self.rt.monitor.register_thread(tid, True)
        return worker

    def wake_worker(self, worker: Worker, core: int) -> None:
        self.sim.unpark(worker.tid, core)

    def poke_leader(self) -> None:
        self.sim.poke_leader()

    def trace(self, kind: str, core: int, tid: int, **extra: object) -> None:
        self.sim.trace_hook(kind, core, tid, **extra)

    def on_finished(self) -> None:
        self.sim.stop_leader()

    # --- driver --------------------------------------------------------
    def run_to_completion(self, max_time_us: int = 10**8):
        """Drive the simulation to completion and build the metrics report.

        Raises StalledError if the liveness tripwire fired or the run could
        not finish within max_time_us of simulated time.
        """
        from .metrics import build_sim_report  # local import to avoid a cycle

        self.sim.run(max_time_us=max_time_us)
        if self.rt.stalled is not None:
            raise StalledError(self.rt.stalled)
        if not self.rt.finished:
            raise StalledError(
                f"run did not complete within {max_time_us}us of simulated time"
            )
        self.rt.final_sweep()
        return build_sim_report(self)


def start_sim_run(
    config: RuntimeConfig,
    sim_config: SimConfig,
    graph: TaskGraph,
    workload_id: str = "",
) -> SimRun:
    """Bind a runtime to a fresh simulator over the given task graph."""
    return SimRun(config, sim_config, graph, workload_id=workload_id)
