"""Tasks with compute and blocking-I/O phases, plus their dependency graph.

A task is dispatchable once every predecessor has completed; the runtime
hands dispatchable tasks to workers in FIFO order (the order in which they
became dispatchable, task-id order for the initial roots).
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

__all__ = ["Layout", "Task", "TaskGraph", "GraphError", "PHASE_COMPUTE", "PHASE_IO", "PHASE_YIELD"]

PHASE_COMPUTE = "compute"
PHASE_IO = "io"
PHASE_YIELD = "yield"


class Layout(Enum):
    """Ordering of a task's compute work relative to its blocking ops.

    IO_FIRST is the adversarial layout (blocking first, compute after);
    COMPUTE_FIRST blocks only at the end; COMPUTE_YIELD_IO inserts an extra
    scheduling point between the compute and the blocking ops.
    """

    IO_FIRST = "io_first"
    COMPUTE_FIRST = "compute_first"
    COMPUTE_YIELD_IO = "compute_yield_io"


class GraphError(ValueError):
    """Malformed task graph (cycle, unknown id, duplicate)."""


@dataclass(frozen=True)
class Task:
    task_id: int
    compute_us: int
    io_ops: tuple[tuple[str, int], ...] = ()
    layout: Layout = Layout.COMPUTE_FIRST
    label: str = ""

    def phases(self) -> list[tuple]:
        """Phase list for the worker to execute in order.

        Entries are ("compute", us), ("io", kind, us), or ("yield",).
        """
        compute = [(PHASE_COMPUTE, self.compute_us)] if self.compute_us > 0 else []
        ios = [(PHASE_IO, kind, us) for kind, us in self.io_ops]
        if self.layout is Layout.IO_FIRST:
            return ios + compute
        if self.layout is Layout.COMPUTE_FIRST:
            return compute + ios
        if ios:
            return compute + [(PHASE_YIELD,)] + ios
        return compute

    @property
    def io_us(self) -> int:
        return sum(us for _, us in self.io_ops)


class TaskGraph:
    """Dependency DAG with a FIFO dispatch queue; safe to share across threads."""

    def __init__(self, tasks: Sequence[Task], edges: Iterable[tuple[int, int]] = ()) -> None:
        self.tasks: dict[int, Task] = {}
        for task in tasks:
            if task.task_id in self.tasks:
                raise GraphError(f"duplicate task id {task.task_id}")
            self.tasks[task.task_id] = task
        self.succs: dict[int, list[int]] = {tid: [] for tid in self.tasks}
        self.remaining_preds: dict[int, int] = {tid: 0 for tid in self.tasks}
        self.edges: list[tuple[int, int]] = []
        for pred, succ in edges:
            if pred not in self.tasks or succ not in self.tasks:
                raise GraphError(f"edge ({pred}, {succ}) references unknown task")
            self.succs[pred].append(succ)
            self.remaining_preds[succ] += 1
            self.edges.append((pred, succ))
        self._check_acyclic()
        self._lock = threading.Lock()
        self._dispatchable: deque[int] = deque(
            tid for tid in self.tasks if self.remaining_preds[tid] == 0
        )
        self._started: set[int] = set()
        self._completed: set[int] = set()

    def _check_acyclic(self) -> None:
        indeg = dict(self.remaining_preds)
        frontier = deque(tid for tid, d in indeg.items() if d == 0)
        seen = 0
        while frontier:
            tid = frontier.popleft()
            seen += 1
            for succ in self.succs[tid]:
                indeg[succ] -= 1
                if indeg[succ] == 0:
                    frontier.append(succ)
        if seen != len(self.tasks):
            raise GraphError("task graph contains a cycle")

    # ------------------------------------------------------------------
    # Dispatch protocol
    # ------------------------------------------------------------------
    def take(self) -> Task | None:
        """Pop the oldest dispatchable task; None when none is ready now."""
        with self._lock:
            if not self._dispatchable:
                return None
            tid = self._dispatchable.popleft()
            if tid in self._started:
                raise GraphError(f"task {tid} dispatched twice")
            self._started.add(tid)
            return self.tasks[tid]

    def complete(self, task_id: int) -> int:
        """Mark done; returns how many successors just became dispatchable."""
        with self._lock:
            if task_id in self._completed:
                raise GraphError(f"task {task_id} completed twice")
            self._completed.add(task_id)
            freed = 0
            for succ in self.succs[task_id]:
                self.remaining_preds[succ] -= 1
                if self.remaining_preds[succ] == 0:
                    self._dispatchable.append(succ)
                    freed += 1
            return freed

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------
    def dispatchable_count(self) -> int:
        with self._lock:
            return len(self._dispatchable)

    def remaining(self) -> int:
        with self._lock:
            return len(self.tasks) - len(self._completed)

    def completed_ids(self) -> set[int]:
        with self._lock:
            return set(self._completed)

    def __len__(self) -> int:
        return len(self.tasks)

    def total_compute_us(self) -> int:
        return sum(t.compute_us for t in self.tasks.values())

    def total_io_us(self) -> int:
        return sum(t.io_us for t in self.tasks.values())
