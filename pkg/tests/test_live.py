"""Real-thread smoke tests: wall-clock A/B and bookkeeping sanity.

Timing-sensitive by nature; thresholds are generous and the worker count
scales down to the machine (the backfilling effect needs only one core:
blocked sleeps overlap another worker's compute).
"""

from __future__ import annotations

import os

import pytest

from corefill.live import start_live_run
from corefill.runtime import RuntimeConfig
from corefill.tasks import Layout
from corefill.workloads import WorkloadSpec, generate

N_CORES = min(4, os.cpu_count() or 1)


def live_spec(n_tasks: int, compute_us: int = 5000, io_us: int = 5000) -> WorkloadSpec:
    return WorkloadSpec(
        kind="mix", n_tasks=n_tasks, compute_us=compute_us, io_us=io_us,
        layout=Layout.COMPUTE_FIRST,
    )


@pytest.mark.live
def test_live_run_completes_and_balances():
    graph = generate(live_spec(8, compute_us=2000, io_us=2000))
    run = start_live_run(RuntimeConfig(umt_enabled=True), N_CORES, graph)
    report = run.run_to_completion(max_wall_s=30)
    assert report.tasks_completed == 8
    assert report.blocked_total == report.unblocked_total
    assert run.rt.stalled is None


@pytest.mark.live
def test_live_baseline_keeps_one_worker_per_core():
    graph = generate(live_spec(8, compute_us=1000, io_us=1000))
    run = start_live_run(RuntimeConfig(umt_enabled=False), N_CORES, graph)
    report = run.run_to_completion(max_wall_s=30)
    assert report.tasks_completed == 8
    assert len(run.rt.workers) == N_CORES
    assert report.blocked_total == 0


@pytest.mark.live
def test_live_umt_beats_baseline_wall_clock():
    # 50% blocking share and ample parallelism: backfilling idle sleep time
    # with other tasks' compute should approach a 2x win even on one CPU.
    results = {}
    for umt in (False, True):
        graph = generate(live_spec(32))
        run = start_live_run(RuntimeConfig(umt_enabled=umt), N_CORES, graph)
        report = run.run_to_completion(max_wall_s=60)
        assert report.tasks_completed == 32
        results[umt] = report
    speedup = results[False].makespan_us / results[True].makespan_us
    assert speedup >= 1.3
    assert results[True].oversub_max <= 0.15
