"""Run metrics: per-core utilization, oversubscription, event totals, CSV I/O.

The CSV schema is stable: one row per run, every column backed by a field of
:class:`MetricsReport`.  Per-core detail rides on the report object itself
(not in the CSV) for tests and oracles.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:  # pragma: no cover
    from .runtime import SimRun

__all__ = ["MetricsReport", "CSV_COLUMNS", "build_sim_report", "append_csv", "read_csv"]

CSV_COLUMNS = [
    "workload_id",
    "mode",
    "umt",
    "seed",
    "cores",
    "makespan_us",
    "utilization_mean",
    "utilization_min",
    "oversub_mean",
    "oversub_max",
    "context_switches",
    "leader_wakeups",
    "surrenders",
    "blocked_total",
    "unblocked_total",
    "tasks_completed",
]


@dataclass
class MetricsReport:
    workload_id: str
    mode: str  # "sim" | "live"
    umt: bool
    seed: int
    cores: int
    makespan_us: int
    utilization_mean: float
    utilization_min: float
    oversub_mean: float
    oversub_max: float
    context_switches: int
    leader_wakeups: int
    surrenders: int
    blocked_total: int
    unblocked_total: int
    tasks_completed: int
    # Per-core detail, kept out of the CSV.
    per_core_utilization: list[float] = field(default_factory=list)
    per_core_oversubscription: list[float] = field(default_factory=list)
    per_core_context_switches: list[int] = field(default_factory=list)
    per_core_blocked: list[int] = field(default_factory=list)
    per_core_unblocked: list[int] = field(default_factory=list)

    def csv_row(self) -> dict[str, str]:
        row: dict[str, str] = {}
        for col in CSV_COLUMNS:
            value = getattr(self, col)
            if isinstance(value, float):
                row[col] = f"{value:.6f}"
            elif isinstance(value, bool):
                row[col] = "on" if value else "off"
            else:
                row[col] = str(value)
        return row

    @property
    def throughput(self) -> float:
        """Tasks per simulated (or wall) second."""
        if self.makespan_us <= 0:
            return 0.0
        return self.tasks_completed / (self.makespan_us / 1e6)


def _fractions(parts_us: Iterable[int], makespan_us: int) -> list[float]:
    if makespan_us <= 0:
        return [0.0 for _ in parts_us]
    return [min(1.0, max(0.0, p / makespan_us)) for p in parts_us]


def build_sim_report(run: "SimRun") -> MetricsReport:
    """Assemble the report for a completed simulated run."""
    rt = run.rt
    sim = run.sim
    makespan = rt.completed_at_us
    times = sim.core_times()
    util = _fractions([busy + over for busy, over, _ in times], makespan)
    oversub = _fractions([over for _, over, _ in times], makespan)
    if rt.monitor is not None:
        blocked, unblocked = rt.monitor.emitted_totals()
        per_blocked = list(rt.monitor.blocked_emitted)
        per_unblocked = list(rt.monitor.unblocked_emitted)
    else:
        blocked = unblocked = 0
        per_blocked = [0] * sim.config.n_cores
        per_unblocked = [0] * sim.config.n_cores
    switches = sim.context_switches()
    return MetricsReport(
        workload_id=run.workload_id,
        mode="sim",
        umt=rt.config.umt_enabled,
        seed=sim.config.rng_seed,
        cores=sim.config.n_cores,
        makespan_us=makespan,
        utilization_mean=sum(util) / len(util),
        utilization_min=min(util),
        oversub_mean=sum(oversub) / len(oversub),
        oversub_max=max(oversub),
        context_switches=sum(switches),
        leader_wakeups=rt.leader_wakeups,
        surrenders=rt.surrenders,
        blocked_total=blocked,
        unblocked_total=unblocked,
        tasks_completed=rt.tasks_completed,
        per_core_utilization=util,
        per_core_oversubscription=oversub,
        per_core_context_switches=switches,
        per_core_blocked=per_blocked,
        per_core_unblocked=per_unblocked,
    )


def append_csv(path: str | Path, report: MetricsReport) -> None:
    """Append one run as a CSV row, writing the header on first use."""
    path = Path(path)
    new_file = not path.exists() or path.stat().st_size == 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
        if new_file:
            writer.writeheader()
        writer.writerow(report.csv_row())


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as handle:
        return list(csv.DictReader(handle))
