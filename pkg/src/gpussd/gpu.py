"""Trace-driven GPU workload model.

Kernels are modeled by an execution time plus the I/O requests they issue.
A fixed number of identical core slots run one kernel each; the scheduler
decides which workload's next kernel takes a freed slot.

Trace files hold one JSON object per line::

    {"workload": "bert", "kernel": 0, "name": "gemm", "grid": 128, "block": 256,
     "exec_ns": 1000, "ios": [{"delta_ns": 0, "op": "R", "offset": 0, "len": 4096}]}

Compacted traces produced by the sampler interleave group header lines
(objects carrying a ``"group"`` key) that give each following record a
replication weight.
"""

from __future__ import annotations

import enum
import io
import json
import os
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Optional, TextIO, Union

from .engine import Engine
from .errors import NegativeField, ParseError, QueueFull
from .host import HostInterface, IoRequest, Op, QueuePair


class Policy(enum.Enum):
    ROUND_ROBIN = "rr"
    LARGE_CHUNK = "large_chunk"
    AUTO = "auto"


class KernelIo(NamedTuple):
    delta_ns: int
    op: Op
    offset: int
    length: int


@dataclass(slots=True)
class KernelDescriptor:
    workload_id: str
    kernel_id: int
    name: str
    grid_blocks: int
    block_threads: int
    exec_ns: int
    ios: tuple = ()


@dataclass(frozen=True)
class SchedulerConfig:
    policy: Policy = Policy.ROUND_ROBIN
    block_stride: int = 2
    core_count: int = 64
    chunk_len: int = 32

    def __post_init__(self) -> None:
        for name in ("block_stride", "core_count", "chunk_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


# ----------------------------------------------------------------- trace format
_RECORD_FIELDS = {"workload": str, "kernel": int, "name": str, "grid": int, "block": int,
                  "exec_ns": int, "ios": list}
_IO_FIELDS = {"delta_ns": int, "op": str, "offset": int, "len": int}
_GROUP_FIELDS = {"group": int, "name": str, "grid": int, "block": int, "N": int, "m": int,
                 "weight": (int, float)}


def _typed(obj: dict, schema: dict, lineno: int, what: str) -> None:
    if set(obj) != set(schema):
        missing = sorted(set(schema) - set(obj))
        extra = sorted(set(obj) - set(schema))
        raise ParseError(lineno, f"{what} fields: missing {missing}, unexpected {extra}")
    for key, typ in schema.items():
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, typ):
            raise ParseError(lineno, f"{what} field {key!r} has wrong type")


def parse_record(obj: dict, lineno: int = 0) -> KernelDescriptor:
    _typed(obj, _RECORD_FIELDS, lineno, "record")
    if obj["exec_ns"] < 0:
        raise NegativeField(lineno, "exec_ns is negative")
    if obj["grid"] < 1 or obj["block"] < 1:
        raise ParseError(lineno, "grid and block must be >= 1")
    ios = []
    for item in obj["ios"]:
        if not isinstance(item, dict):
            raise ParseError(lineno, "io entries must be objects")
        _typed(item, _IO_FIELDS, lineno, "io")
        if item["delta_ns"] < 0 or item["offset"] < 0 or item["len"] < 0:
            raise NegativeField(lineno, "negative io field")
        if item["op"] not in ("R", "W"):
            raise ParseError(lineno, f"io op must be R or W, got {item['op']!r}")
        ios.append(KernelIo(item["delta_ns"], Op(item["op"]), item["offset"], item["len"]))
    return KernelDescriptor(obj["workload"], obj["kernel"], obj["name"], obj["grid"],
                            obj["block"], obj["exec_ns"], tuple(ios))


def kernel_record(k: KernelDescriptor) -> dict:
    return {
        "workload": k.workload_id, "kernel": k.kernel_id, "name": k.name,
        "grid": k.grid_blocks, "block": k.block_threads, "exec_ns": k.exec_ns,
        "ios": [{"delta_ns": i.delta_ns, "op": i.op.value, "offset": i.offset, "len": i.length}
                for i in k.ios],
    }


def dumps_record(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_trace(kernels: Iterable[KernelDescriptor], sink: TextIO) -> int:
    n = 0
    for k in kernels:
        sink.write(dumps_record(kernel_record(k)) + "\n")
        n += 1
    return n


def largest_remainder(total: int, count: int) -> list[int]:
    """Split ``total`` replays over ``count`` equally weighted records."""
    base, extra = divmod(total, count)
    return [base + (1 if i < extra else 0) for i in range(count)]


def _parse(source) -> tuple[list[KernelDescriptor], dict[int, dict]]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return _parse(fh)
    entries: list[KernelDescriptor] = []
    groups: dict[int, dict] = {}
    current: Optional[int] = None
    for lineno, line in enumerate(source, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise ParseError(lineno, "record must be a JSON object")
        if "group" in obj:
            _typed(obj, _GROUP_FIELDS, lineno, "group header")
            if obj["m"] < 1 or obj["N"] < obj["m"]:
                raise ParseError(lineno, "group header needs 1 <= m <= N")
            current = obj["group"]
            groups.setdefault(current, {"N": obj["N"], "m": obj["m"], "members": []})
            continue
        k = parse_record(obj, lineno)
        if current is not None:
            groups[current]["members"].append(len(entries))
        entries.append(k)
    return entries, groups


def load_kernels(source: Union[str, os.PathLike, TextIO, Iterable[str]]) -> list[KernelDescriptor]:
    """All kernel records in file order, group headers ignored."""
    return _parse(source)[0]


def load_trace(source: Union[str, os.PathLike, TextIO, Iterable[str]],
               expand: bool = True) -> dict[str, list[KernelDescriptor]]:
    """Parse a trace into per-workload kernel lists (file order per workload).

    With ``expand`` set, records under a group header are replayed so each
    group contributes exactly N kernels.
    """
    entries, groups = _parse(source)
    reps = [1] * len(entries)
    if expand:
        for g in groups.values():
            for idx, r in zip(g["members"], largest_remainder(g["N"], len(g["members"]))):
                reps[idx] = r
    out: dict[str, list[KernelDescriptor]] = {}
    for k, r in zip(entries, reps):
        out.setdefault(k.workload_id, []).extend([k] * r)
    return out


def loads_trace(text: str, expand: bool = True) -> dict[str, list[KernelDescriptor]]:
    return load_trace(io.StringIO(text), expand)


# ------------------------------------------------------------------ scheduling
def select_policy(kernel: KernelDescriptor, cfg: SchedulerConfig) -> Policy:
    if cfg.policy is not Policy.AUTO:
        return cfg.policy
    if kernel.grid_blocks < cfg.block_stride * cfg.core_count:
        return Policy.LARGE_CHUNK
    return Policy.ROUND_ROBIN


class KernelScheduler:
    """Chooses the next kernel across workloads.

    Round robin takes one kernel per workload visit. Large chunk stays on a
    workload for ``chunk_len`` consecutive kernels before rotating.
    """

    def __init__(self, workloads: dict[str, list[KernelDescriptor]], cfg: SchedulerConfig) -> None:
        self.names = list(workloads)
        self.queues = [workloads[n] for n in self.names]
        self.pos = [0] * len(self.names)
        self.cfg = cfg
        self._rr = 0
        self._current = 0
        self._chunk_left = 0

    def _ready(self, w: int) -> bool:
        return self.pos[w] < len(self.queues[w])

    def _take(self, w: int) -> KernelDescriptor:
        k = self.queues[w][self.pos[w]]
        self.pos[w] += 1
        return k

    def next_kernel(self) -> Optional[KernelDescriptor]:
        if self._chunk_left > 0 and self._ready(self._current):
            self._chunk_left -= 1
            return self._take(self._current)
        self._chunk_left = 0
        n = len(self.names)
        for step in range(n):
            w = (self._rr + step) % n
            if self._ready(w):
                self._rr = (w + 1) % n
                k = self._take(w)
                if select_policy(k, self.cfg) is Policy.LARGE_CHUNK:
                    self._current = w
                    self._chunk_left = self.cfg.chunk_len - 1
                return k
        return None


@dataclass(eq=False)
class _Running:
    kernel: KernelDescriptor
    start: int
    ios_left: int
    exec_done: bool = False
    end: Optional[int] = None


class GpuFrontend:
    """Runs kernels on core slots and feeds their I/O to the host interface."""

    def __init__(self, engine: Engine, host: HostInterface,
                 workloads: dict[str, list[KernelDescriptor]], cfg: SchedulerConfig,
                 queue_of: Optional[Callable[[str], int]] = None) -> None:
        self.engine = engine
        self.host = host
        self.cfg = cfg
        self.scheduler = KernelScheduler(workloads, cfg)
        index = {name: i for i, name in enumerate(workloads)}
        self.queue_of = queue_of or (lambda wl: index[wl] % len(host.queues))
        self.free_slots = cfg.core_count
        self._owner: dict[int, _Running] = {}
        self._backlog: dict[int, list[IoRequest]] = {}
        self._next_req = 0
        self.launch_order: list[KernelDescriptor] = []
        self.finished: list[_Running] = []
        host.on_completion = self._on_completion

    def start(self) -> None:
        self._fill()

    def _fill(self) -> None:
        while self.free_slots > 0:
            k = self.scheduler.next_kernel()
            if k is None:
                return
            self.free_slots -= 1
            self.execute_kernel(k)

    def execute_kernel(self, k: KernelDescriptor) -> _Running:
        run = _Running(k, self.engine.now, len(k.ios))
        self.launch_order.append(k)
        self.engine.after(k.exec_ns, self._exec_done, run)
        for io_ in k.ios:
            self.engine.after(io_.delta_ns, self._submit, run, io_)
        return run

    def _submit(self, run: _Running, io_: KernelIo) -> None:
        req = IoRequest(self._next_req, self.queue_of(run.kernel.workload_id), io_.op,
                        io_.offset, io_.length, workload=run.kernel.workload_id)
        self._next_req += 1
        self._owner[req.id] = run
        backlog = self._backlog.setdefault(req.queue_id, [])
        if backlog:
            backlog.append(req)
            return
        try:
            self.host.enqueue(req)
        except QueueFull:
            backlog.append(req)

    def _on_completion(self, qp: QueuePair) -> None:
        for req in self.host.poll_completions(qp):
            run = self._owner.pop(req.id)
            run.ios_left -= 1
            self._maybe_done(run)
        backlog = self._backlog.get(qp.id)
        while backlog and not qp.full:
            self.host.enqueue(backlog.pop(0), qp)

    def _exec_done(self, run: _Running) -> None:
        run.exec_done = True
        self._maybe_done(run)

    def _maybe_done(self, run: _Running) -> None:
        if run.exec_done and run.ios_left == 0 and run.end is None:
            run.end = self.engine.now
            self.finished.append(run)
            self.free_slots += 1
            self._fill()
