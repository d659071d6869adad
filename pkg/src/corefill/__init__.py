"""corefill: keep cores busy during blocking I/O.

A user-space model of per-core thread block/unblock notification channels, a
task runtime whose leader backfills idle cores from a worker pool, a
deterministic scheduler simulator that serves as ground truth, and workload
generators plus a CLI for A/B experiments.
"""

from .channel import (
    EventBatch,
    EventChannel,
    OverflowMode,
    pack,
    unpack,
    wait_any,
)
from .effects import BlockingOp, Compute, Park
from .live import LiveRun, start_live_run
from .metrics import MetricsReport, append_csv, read_csv
from .monitor import (
    MonitorContext,
    MonitorTable,
    SchedState,
    ThreadRecord,
    enable_monitoring,
)
from .runtime import (
    CheckResult,
    ConfigError,
    CoreLedger,
    RuntimeConfig,
    SimRun,
    StalledError,
    TaskRuntime,
    Worker,
    WorkerPool,
    start_sim_run,
    worker_body,
)
from .simkernel import Sim, SimConfig
from .tasks import Layout, Task, TaskGraph
from .trace import TraceStats, load_trace, save_trace, trace_stats
from .workloads import (
    WorkloadSpec,
    gen_independent_mix,
    gen_pipeline,
    gen_wavefront,
    generate,
    load_spec,
)

__version__ = "0.1.0"

__all__ = [
    "BlockingOp",
    "CheckResult",
    "Compute",
    "ConfigError",
    "CoreLedger",
    "EventBatch",
    "EventChannel",
    "Layout",
    "LiveRun",
    "MetricsReport",
    "MonitorContext",
    "MonitorTable",
    "OverflowMode",
    "Park",
    "RuntimeConfig",
    "SchedState",
    "Sim",
    "SimConfig",
    "SimRun",
    "StalledError",
    "Task",
    "TaskGraph",
    "TaskRuntime",
    "ThreadRecord",
    "TraceStats",
    "Worker",
    "WorkerPool",
    "WorkloadSpec",
    "append_csv",
    "enable_monitoring",
    "gen_independent_mix",
    "gen_pipeline",
    "gen_wavefront",
    "generate",
    "load_spec",
    "load_trace",
    "pack",
    "read_csv",
    "save_trace",
    "start_live_run",
    "start_sim_run",
    "trace_stats",
    "unpack",
    "wait_any",
    "worker_body",
]
