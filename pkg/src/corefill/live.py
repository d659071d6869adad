"""Real-thread driver: the same runtime logic on OS threads and wall time.

Workers are Python threads pinned to cores (best effort) interpreting the
shared worker-body generator: compute spins on GIL-releasing hashing so
separate cores genuinely overlap, blocking ops are monitored sleeps, parking
waits on a per-worker event.  The block/unblock hooks bracket the runtime's
own blocking primitives, standing in for a kernel-side switch wrapper.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
import warnings

from .channel import EventChannel, wait_any
from .effects import BlockingOp, Compute, Park
from .metrics import MetricsReport
from .monitor import MonitorContext, MonitorTable, SchedState, enable_monitoring
from .runtime import RuntimeConfig, StalledError, TaskRuntime, Worker, worker_body
from .tasks import TaskGraph

__all__ = ["LiveRun", "start_live_run"]

_SPIN_CHUNK = b"\xa5" * 65536  # large enough that hashing releases the GIL


class LiveRun:
    """One wall-clock run over real threads."""

    def __init__(
        self,
        config: RuntimeConfig,
        n_cores: int,
        graph: TaskGraph,
        workload_id: str = "",
        trace: bool = False,
    ) -> None:
        self.workload_id = workload_id
        self.n_cores = n_cores
        monitor: MonitorTable | None = None
        if config.umt_enabled:
            self.context = MonitorContext()
            monitor = enable_monitoring(self.context, n_cores)
            monitor.tracer = self._monitor_trace
        self.monitor = monitor
        self.rt = TaskRuntime(config, n_cores, graph, monitor)
        self.rt.engine = self
        self._trace_enabled = trace
        self.trace_records: list[dict] = []
        self._trace_lock = threading.Lock()
        self._t0_ns = 0
        self._threads: dict[int, threading.Thread] = {}
        self._started: set[int] = set()
        self._start_lock = threading.Lock()
        self._switch_ins = 0
        self._executed_compute_us = 0
        self._counter_lock = threading.Lock()
        self._ledger_samples: list[tuple[int, tuple[int, ...]]] = []
        self._pin_failed = False
        self._workers: list[Worker] = []
        # Completion doorbell: lets task-freeing completions interrupt the
        # leader's wait instead of riding out the full poll period.  Not a
        # per-core channel; never folded into the ledgers.
        self._doorbell = EventChannel(chan_id=-1)
        # One worker bound per core, born parked in the idle pool; the
        # leader's startup pass wakes them through the ordinary path.
        for core in range(n_cores):
            worker = self.make_worker(core, born_blocked=True)
            self.rt.pool.push(worker)

    # ------------------------------------------------------------------
    # Engine interface
    # ------------------------------------------------------------------
    def now_us(self) -> int:
        return (time.perf_counter_ns() - self._t0_ns) // 1000

    def make_worker(self, core: int, born_blocked: bool) -> Worker:
        worker = self.rt.alloc_worker(core, born_blocked=born_blocked)
        worker.tid = worker.wid
        if self.monitor is not None:
            self.monitor.add_thread(worker.wid, core, born_blocked=born_blocked)
            self.monitor.register_thread(worker.wid, True)
        self._make_thread(worker)
        self._workers.append(worker)
        return worker

    def wake_worker(self, worker: Worker, core: int) -> None:
        # First wake starts the thread; later wakes release its park.
        with self._start_lock:
            fresh = worker.wid not in self._started
            if fresh:
                self._started.add(worker.wid)
        if fresh:
            self._threads[worker.wid].start()
        else:
            worker.wake_event.set()

    def poke_leader(self) -> None:
        self._doorbell.record_unblock()

    def trace(self, kind: str, core: int, tid: int, **extra: object) -> None:
        if not self._trace_enabled:
            return
        with self._trace_lock:
            self.trace_records.append(
                {"t": self.now_us(), "core": core, "tid": tid, "kind": kind, "extra": dict(extra)}
            )

    def on_finished(self) -> None:
        pass  # the leader loop exits on rt.finished

    def _monitor_trace(self, kind: str, core: int, tid: int, **extra: object) -> None:
        self.trace(kind, core, tid, **extra)

    # ------------------------------------------------------------------
    # Worker thread machinery
    # ------------------------------------------------------------------
    def _make_thread(self, worker: Worker) -> None:
        thread = threading.Thread(
            target=self._worker_main, args=(worker,), name=f"worker-{worker.wid}", daemon=True
        )
        self._threads[worker.wid] = thread

    def _pin(self, core: int) -> None:
        if self._pin_failed:
            return
        try:
            cpus = os.sched_getaffinity(0)
            os.sched_setaffinity(0, {sorted(cpus)[core % len(cpus)]})
        except (AttributeError, OSError):
            if not self._pin_failed:
                self._pin_failed = True
                warnings.warn("core pinning unavailable; running unpinned", RuntimeWarning)

    def _worker_main(self, worker: Worker) -> None:
        self._pin(worker.bound_core)
        monitor = self.monitor
        if monitor is not None:
            # Emulate the first dispatch: pool-born workers owe the wake-up
            # unblock of the leader that started them; initially-bound
            # workers just begin running, eventlessly.
            monitor.on_switch_in(worker.wid, worker.born_blocked, worker.bound_core)
            if worker.born_blocked:
                self._note_switch_in()
        for effect in worker_body(worker, self.rt):
            if isinstance(effect, Compute):
                self._spin(effect.duration_us)
            elif isinstance(effect, BlockingOp):
                if monitor is not None:
                    monitor.on_switch_out(worker.wid, SchedState.BLOCKED)
                time.sleep(effect.duration_us / 1e6)
                if monitor is not None:
                    monitor.on_switch_in(worker.wid, True, worker.bound_core)
                self._note_switch_in()
            elif isinstance(effect, Park):
                if monitor is not None:
                    monitor.on_switch_out(worker.wid, SchedState.BLOCKED)
                worker.wake_event.wait()
                worker.wake_event.clear()
                self._pin(worker.bound_core)  # the leader may have rebound us
                if monitor is not None:
                    monitor.on_switch_in(worker.wid, True, worker.bound_core)
                self._note_switch_in()
        if monitor is not None:
            monitor.on_exit(worker.wid)

    def _spin(self, duration_us: int) -> None:
        """Burn CPU until the deadline; hashing releases the GIL per chunk."""
        deadline = time.perf_counter_ns() + duration_us * 1000
        digest = hashlib.sha256()
        while time.perf_counter_ns() < deadline:
            digest.update(_SPIN_CHUNK)
        with self._counter_lock:
            self._executed_compute_us += duration_us

    def _note_switch_in(self) -> None:
        with self._counter_lock:
            self._switch_ins += 1

    # ------------------------------------------------------------------
    # Leader thread
    # ------------------------------------------------------------------
    def _leader_main(self, max_wall_s: float) -> None:
        rt = self.rt
        timeout_us = rt.config.leader_timeout_us
        deadline = time.monotonic() + max_wall_s
        last_progress = (time.monotonic(), rt.tasks_completed)
        waitable = [self._doorbell]
        if self.monitor is not None:
            waitable = list(self.monitor.channels) + waitable
        rt.leader_iteration()  # startup pass wakes the initial workers
        while not rt.finished:
            wait_any(waitable, timeout_us)
            self._doorbell.drain(blocking=False)
            rt.leader_iteration()
            self._sample_ledgers()
            done = rt.tasks_completed
            now = time.monotonic()
            if done != last_progress[1]:
                last_progress = (now, done)
            elif now > deadline or now - last_progress[0] > max_wall_s:
                rt.force_stall(
                    f"no progress for {max_wall_s}s with {rt.graph.remaining()} tasks left"
                )

    def _sample_ledgers(self) -> None:
        if self.rt.config.umt_enabled:
            self._ledger_samples.append(
                (self.now_us(), tuple(ledger.ready_count for ledger in self.rt.ledgers))
            )

    # ------------------------------------------------------------------
    # Driver
    # ------------------------------------------------------------------
    def run_to_completion(self, max_wall_s: float = 60.0) -> MetricsReport:
        self._t0_ns = time.perf_counter_ns()
        leader = threading.Thread(
            target=self._leader_main, args=(max_wall_s,), name="leader", daemon=True
        )
        leader.start()
        leader.join(timeout=max_wall_s * 2)
        # Wake anything still parked so worker threads can observe shutdown.
        for worker in self.rt.pool.pop_all():
            self.wake_worker(worker, worker.bound_core)
        for thread in self._threads.values():
            if thread.is_alive():
                thread.join(timeout=5.0)
        if self.rt.stalled is not None:
            raise StalledError(self.rt.stalled)
        if not self.rt.finished:
            raise StalledError(f"live run did not finish within {max_wall_s}s")
        self.rt.final_sweep()
        return self._build_report()

    def _build_report(self) -> MetricsReport:
        rt = self.rt
        makespan = max(1, rt.completed_at_us)
        utilization = min(1.0, self._executed_compute_us / (self.n_cores * makespan))
        oversub = self._oversub_fractions(makespan)
        if self.monitor is not None:
            blocked, unblocked = self.monitor.emitted_totals()
            per_blocked = list(self.monitor.blocked_emitted)
            per_unblocked = list(self.monitor.unblocked_emitted)
        else:
            blocked = unblocked = 0
            per_blocked = [0] * self.n_cores
            per_unblocked = [0] * self.n_cores
        return MetricsReport(
            workload_id=self.workload_id,
            mode="live",
            umt=rt.config.umt_enabled,
            seed=0,
            cores=self.n_cores,
            makespan_us=makespan,
            utilization_mean=utilization,
            utilization_min=utilization,
            oversub_mean=sum(oversub) / len(oversub),
            oversub_max=max(oversub),
            context_switches=self._switch_ins,
            leader_wakeups=rt.leader_wakeups,
            surrenders=rt.surrenders,
            blocked_total=blocked,
            unblocked_total=unblocked,
            tasks_completed=rt.tasks_completed,
            per_core_utilization=[utilization] * self.n_cores,
            per_core_oversubscription=oversub,
            per_core_context_switches=[0] * self.n_cores,
            per_core_blocked=per_blocked,
            per_core_unblocked=per_unblocked,
        )

    def _oversub_fractions(self, makespan_us: int) -> list[float]:
        """Time-weighted fraction of leader samples showing >= 2 ready.

        Live mode has no ground truth for run-queue occupancy; the sampled
        user-held counters are the best available estimate.
        """
        totals = [0] * self.n_cores
        samples = [s for s in self._ledger_samples if s[0] <= makespan_us]
        for (t0, counts), (t1, _) in zip(samples, samples[1:]):
            for core, count in enumerate(counts):
                if count >= 2:
                    totals[core] += t1 - t0
        return [min(1.0, t / makespan_us) for t in totals]


def start_live_run(
    config: RuntimeConfig,
    n_cores: int,
    graph: TaskGraph,
    workload_id: str = "",
    trace: bool = False,
) -> LiveRun:
    """Bind a runtime to real threads over the given task graph."""
    return LiveRun(config, n_cores, graph, workload_id=workload_id, trace=trace)
