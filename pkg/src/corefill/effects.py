"""Effects a worker body may yield to whatever engine is driving it.

Worker logic is written once as a generator; the simulator interprets these
effects against virtual time and the live driver maps them onto a real
thread (CPU spin, sleep, park on an event).
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["Compute", "BlockingOp", "Park"]


@dataclass(frozen=True)
class Compute:
    """Occupy the core for duration_us of CPU work; preemptible."""

    duration_us: int


@dataclass(frozen=True)
class BlockingOp:
    """Leave the core for duration_us (I/O, sleep, network wait)."""

    duration_us: int
    kind: str = "io"


@dataclass(frozen=True)
class Park:
    """Leave the core until explicitly woken."""
