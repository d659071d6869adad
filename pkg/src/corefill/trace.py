"""JSON-lines trace files and the statistics derived from them.

One object per line: {"t": us, "core": id, "tid": id, "kind": k, "extra": {}}
with kind in {block, unblock, wake, surrender, dispatch, migrate}.  Every
record carries the emitting core's monitored ready-or-running occupancy
after the event in extra["occ"] (and extra["occ_from"] for the source core
of a migrate), which is what makes oversubscription periods recoverable
from the trace alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["TRACE_KINDS", "TraceError", "TraceStats", "save_trace", "load_trace", "trace_stats"]

TRACE_KINDS = ("block", "unblock", "wake", "surrender", "dispatch", "migrate")


class TraceError(ValueError):
    """Malformed trace line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def save_trace(path: str | Path, records: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as handle:
        for record in records:
            handle.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_trace(path: str | Path) -> list[dict]:
    records: list[dict] = []
    with Path(path).open() as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(line_no, f"invalid JSON ({exc.msg})") from exc
            for key in ("t", "core", "tid", "kind"):
                if key not in record:
                    raise TraceError(line_no, f"missing field {key!r}")
            if record["kind"] not in TRACE_KINDS:
                raise TraceError(line_no, f"unknown kind {record['kind']!r}")
            records.append(record)
    return records


@dataclass
class TraceStats:
    """Aggregates recovered from a trace."""

    span_us: int = 0
    per_core_blocked: dict[int, int] = field(default_factory=dict)
    per_core_unblocked: dict[int, int] = field(default_factory=dict)
    per_core_dispatches: dict[int, int] = field(default_factory=dict)
    per_core_oversub_us: dict[int, int] = field(default_factory=dict)
    per_core_oversub_periods: dict[int, int] = field(default_factory=dict)
    surrenders: int = 0
    migrations: int = 0

    @property
    def blocked_total(self) -> int:
        return sum(self.per_core_blocked.values())

    @property
    def unblocked_total(self) -> int:
        return sum(self.per_core_unblocked.values())

    @property
    def dispatch_total(self) -> int:
        return sum(self.per_core_dispatches.values())

    def oversub_fraction(self, core: int) -> float:
        if self.span_us <= 0:
            return 0.0
        return self.per_core_oversub_us.get(core, 0) / self.span_us


def trace_stats(records: list[dict]) -> TraceStats:
    """Recompute per-core event counts and oversubscription periods.

    Oversubscription integration walks the occupancy annotations: a core is
    oversubscribed over an interval when its last reported occupancy was >= 2.
    """
    stats = TraceStats()
    if not records:
        return stats
    end = max(r["t"] for r in records)
    stats.span_us = end
    occ: dict[int, int] = {}
    last_change: dict[int, int] = {}

    def _settle(core: int, t: int, new_occ: int) -> None:
        prev = occ.get(core, 0)
        since = last_change.get(core, 0)
        if prev >= 2 and t > since:
            stats.per_core_oversub_us[core] = stats.per_core_oversub_us.get(core, 0) + (t - since)
        if new_occ >= 2 and prev < 2:
            stats.per_core_oversub_periods[core] = stats.per_core_oversub_periods.get(core, 0) + 1
        occ[core] = new_occ
        last_change[core] = t

    for record in records:
        t, core, kind = record["t"], record["core"], record["kind"]
        extra = record.get("extra", {})
        if kind == "block":
            stats.per_core_blocked[core] = stats.per_core_blocked.get(core, 0) + 1
        elif kind == "unblock":
            stats.per_core_unblocked[core] = stats.per_core_unblocked.get(core, 0) + 1
        elif kind == "dispatch":
            stats.per_core_dispatches[core] = stats.per_core_dispatches.get(core, 0) + 1
        elif kind == "surrender":
            stats.surrenders += 1
        elif kind == "migrate":
            stats.migrations += 1
            if "occ_from" in extra and "src" in extra:
                _settle(extra["src"], t, extra["occ_from"])
        if "occ" in extra:
            _settle(core, t, extra["occ"])

    for core in list(occ):
        _settle(core, end, occ[core])
    return stats
