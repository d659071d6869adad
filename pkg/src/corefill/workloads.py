"""Synthetic task-graph generators and the plain-text workload config format.

Three families:

* pipeline  — per-slice chains swept forward (writes) then backward (reads),
              the shape of a seismic-inversion style solver with snapshots;
* wavefront — 2-D iteration/block grid where iteration i+1 starts as soon as
              its iteration-i neighbors are done, with periodic checkpoint
              writes, the shape of a stencil solver with checkpointing;
* mix       — independent tasks, the instrument for layout experiments.

All generation is a pure function of the spec; structural counts are
closed-form and asserted in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .tasks import Layout, Task, TaskGraph

__all__ = [
    "WorkloadSpec",
    "InvalidSpecError",
    "ConfigParseError",
    "gen_pipeline",
    "gen_wavefront",
    "gen_independent_mix",
    "generate",
    "load_spec",
    "parse_spec_text",
    "with_layout",
]

KINDS = ("pipeline", "wavefront", "mix")

_LAYOUTS = {layout.value: layout for layout in Layout}


class InvalidSpecError(ValueError):
    """Workload parameters fail validation."""


class ConfigParseError(ValueError):
    """Config file rejected; carries the offending 1-based line number."""

    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    compute_us: int = 200
    io_us: int = 200
    io_frequency: int = 1
    layout: Layout = Layout.COMPUTE_FIRST
    seed: int = 0
    # mix
    n_tasks: int = 0
    # wavefront
    iterations: int = 0
    blocks: int = 0
    # pipeline
    timesteps: int = 0
    slices: int = 0
    halo_us: int = 0  # 0 disables halo-exchange blocking ops

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidSpecError(f"unknown workload kind {self.kind!r}")
        if self.compute_us <= 0 or self.io_us <= 0:
            raise InvalidSpecError("compute_us and io_us must be > 0")
        if self.io_frequency < 1:
            raise InvalidSpecError("io_frequency must be >= 1")
        if self.halo_us < 0:
            raise InvalidSpecError("halo_us must be >= 0")
        if self.kind == "mix" and self.n_tasks < 0:
            raise InvalidSpecError("n_tasks must be >= 0")
        if self.kind == "wavefront" and (self.iterations < 1 or self.blocks < 1):
            raise InvalidSpecError("wavefront needs iterations >= 1 and blocks >= 1")
        if self.kind == "pipeline" and (self.timesteps < 1 or self.slices < 1):
            raise InvalidSpecError("pipeline needs timesteps >= 1 and slices >= 1")

    @property
    def workload_id(self) -> str:
        if self.kind == "mix":
            dims = f"n{self.n_tasks}"
        elif self.kind == "wavefront":
            dims = f"i{self.iterations}b{self.blocks}"
        else:
            dims = f"t{self.timesteps}s{self.slices}"
        return (
            f"{self.kind}-{dims}-c{self.compute_us}-io{self.io_us}"
            f"-f{self.io_frequency}-{self.layout.value}"
        )


def gen_pipeline(spec: WorkloadSpec) -> TaskGraph:
    """Forward/backward sweep over per-slice chains with snapshot I/O tasks.

    Forward update F(t, s) computes slice s at timestep t; every
    io_frequency-th timestep (t % io_frequency == 0) also gets a standalone
    snapshot-write task W(t, s) hanging off its update.  Writes are sinks:
    they gate nothing, so the sweep never waits on them.  The backward
    phase mirrors the chain in reverse timestep order; snapshot timesteps
    insert a read task R(t, s) on the chain just before the update that
    consumes it, which keeps reads on the critical path.  Halo exchange,
    when halo_us > 0, is a blocking op on every update whose slice has a
    neighbor.  All dependencies are slice-local.
    """
    spec.validate()
    if spec.kind != "pipeline":
        raise InvalidSpecError(f"expected pipeline spec, got {spec.kind!r}")
    tasks: list[Task] = []
    edges: list[tuple[int, int]] = []
    n_t, n_s = spec.timesteps, spec.slices
    span = n_t * n_s

    def halo_ops(slice_idx: int) -> tuple[tuple[str, int], ...]:
        ops: list[tuple[str, int]] = []
        if spec.halo_us > 0:
            if slice_idx > 0:
                ops.append(("halo", spec.halo_us))
            if slice_idx < n_s - 1:
                ops.append(("halo", spec.halo_us))
        return tuple(ops)

    def fwd(t: int, s: int) -> int:
        return t * n_s + s

    def wr(t: int, s: int) -> int:
        return span + t * n_s + s

    def bwd(t: int, s: int) -> int:
        return 2 * span + t * n_s + s

    def rd(t: int, s: int) -> int:
        return 3 * span + t * n_s + s

    def snapshot(t: int) -> bool:
        return t % spec.io_frequency == 0

    for t in range(n_t):
        for s in range(n_s):
            tasks.append(Task(fwd(t, s), spec.compute_us, halo_ops(s),
                              spec.layout, label=f"F{t}.{s}"))
            if t > 0:
                edges.append((fwd(t - 1, s), fwd(t, s)))
            if snapshot(t):
                tasks.append(Task(wr(t, s), 0, (("write", spec.io_us),),
                                  spec.layout, label=f"W{t}.{s}"))
                edges.append((fwd(t, s), wr(t, s)))
    for s in range(n_s):
        for t in range(n_t - 1, -1, -1):
            tasks.append(Task(bwd(t, s), spec.compute_us, halo_ops(s),
                              spec.layout, label=f"B{t}.{s}"))
            # The predecessor on the reverse chain: the next-younger backward
            # update, or the end of the forward sweep at the junction.
            prev = bwd(t + 1, s) if t < n_t - 1 else fwd(n_t - 1, s)
            if snapshot(t):
                tasks.append(Task(rd(t, s), 0, (("read", spec.io_us),),
                                  spec.layout, label=f"R{t}.{s}"))
                edges.append((prev, rd(t, s)))
                edges.append((rd(t, s), bwd(t, s)))
            else:
                edges.append((prev, bwd(t, s)))
    return TaskGraph(tasks, edges)


def gen_wavefront(spec: WorkloadSpec) -> TaskGraph:
    """Iteration/block grid with wavefront dependencies and checkpoints.

    Update task (i, b) depends on (i, b-1) within its iteration and on
    (i-1, b+1) from the previous one (the last block falls back to its own
    predecessor, so a 1-block grid degenerates to a chain).  Every
    io_frequency-th iteration (1-based: iterations f, 2f, ...) checkpoints:
    each of its blocks gets a write task after the model update, in this
    order.  Writes are sinks so checkpointing never stalls the wave; it
    only costs the time somebody has to spend blocked in the write.
    """
    spec.validate()
    if spec.kind != "wavefront":
        raise InvalidSpecError(f"expected wavefront spec, got {spec.kind!r}")
    n_i, n_b = spec.iterations, spec.blocks
    tasks: list[Task] = []
    edges: list[tuple[int, int]] = []

    def tid(i: int, b: int) -> int:
        return i * n_b + b

    def wid(i: int, b: int) -> int:
        return n_i * n_b + i * n_b + b

    for i in range(n_i):
        checkpoint = (i + 1) % spec.io_frequency == 0
        for b in range(n_b):
            tasks.append(Task(tid(i, b), spec.compute_us, (),
                              spec.layout, label=f"I{i}.{b}"))
            if b > 0:
                edges.append((tid(i, b - 1), tid(i, b)))
            if i > 0:
                if b + 1 < n_b:
                    edges.append((tid(i - 1, b + 1), tid(i, b)))
                elif n_b == 1:
                    edges.append((tid(i - 1, b), tid(i, b)))
            if checkpoint:
                tasks.append(Task(wid(i, b), 0, (("write", spec.io_us),),
                                  spec.layout, label=f"W{i}.{b}"))
                edges.append((tid(i, b), wid(i, b)))
    return TaskGraph(tasks, edges)


def gen_independent_mix(spec: WorkloadSpec) -> TaskGraph:
    """n independent tasks, each compute plus one blocking op, per layout."""
    spec.validate()
    if spec.kind != "mix":
        raise InvalidSpecError(f"expected mix spec, got {spec.kind!r}")
    tasks = [
        Task(
            task_id=n,
            compute_us=spec.compute_us,
            io_ops=(("io", spec.io_us),),
            layout=spec.layout,
            label=f"M{n}",
        )
        for n in range(spec.n_tasks)
    ]
    return TaskGraph(tasks, edges=())


def generate(spec: WorkloadSpec) -> TaskGraph:
    spec.validate()
    if spec.kind == "pipeline":
        return gen_pipeline(spec)
    if spec.kind == "wavefront":
        return gen_wavefront(spec)
    return gen_independent_mix(spec)


# ----------------------------------------------------------------------
# Plain-text config format: one `key = value` per line, '#' comments.
# ----------------------------------------------------------------------
_INT_KEYS = {
    "compute_us",
    "io_us",
    "io_frequency",
    "seed",
    "n_tasks",
    "iterations",
    "blocks",
    "timesteps",
    "slices",
    "halo_us",
}


def parse_spec_text(text: str) -> WorkloadSpec:
    values: dict[str, object] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(line_no, f"expected 'key = value', got {raw.strip()!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key == "kind":
            if value not in KINDS:
                raise ConfigParseError(line_no, f"unknown kind {value!r} (expected one of {KINDS})")
            values["kind"] = value
        elif key == "layout":
            if value not in _LAYOUTS:
                raise ConfigParseError(
                    line_no, f"unknown layout {value!r} (expected one of {sorted(_LAYOUTS)})"
                )
            values["layout"] = _LAYOUTS[value]
        elif key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ConfigParseError(line_no, f"{key} needs an integer, got {value!r}") from None
        else:
            raise ConfigParseError(line_no, f"unknown key {key!r}")
    if "kind" not in values:
        raise ConfigParseError(0, "missing required key 'kind'")
    spec = WorkloadSpec(**values)  # type: ignore[arg-type]
    try:
        spec.validate()
    except InvalidSpecError as exc:
        raise ConfigParseError(0, str(exc)) from exc
    return spec


def load_spec(path: str | Path) -> WorkloadSpec:
    return parse_spec_text(Path(path).read_text())


def with_layout(spec: WorkloadSpec, layout: Layout) -> WorkloadSpec:
    """Same workload, different phase ordering."""
    return replace(spec, layout=layout)
