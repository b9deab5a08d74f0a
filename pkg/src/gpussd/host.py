"""Multi-queue host interface.

Requests enter a submission queue, are split into page-scoped fragments and
handed to the FTL. Requests arriving in the same simulated tick are
dispatched together, so sub-page FINE writes that arrive concurrently share a
physical page. A request completes when the last flash transaction carrying
one of its sectors completes.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .engine import Engine
from .errors import OutOfRange, QueueFull, UnalignedAccess
from .flash import Cause, FlashBackend, FlashGeometry, FlashTransaction, TxnKind
from .ftl import Ftl, MappingGranularity, WriteFragment


class Op(enum.Enum):
    READ = "R"
    WRITE = "W"


@dataclass(eq=False)
class IoRequest:
    id: int
    queue_id: int
    op: Op
    offset_bytes: int
    length_bytes: int
    submit_time: Optional[int] = None
    complete_time: Optional[int] = None
    workload: str = ""

    @property
    def response_ns(self) -> Optional[int]:
        if self.complete_time is None or self.submit_time is None:
            return None
        return self.complete_time - self.submit_time


@dataclass(eq=False)
class QueuePair:
    id: int
    depth: int = 256
    pending: dict = field(default_factory=dict)
    completed: deque = field(default_factory=deque)

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("queue depth must be >= 1")

    @property
    def full(self) -> bool:
        return len(self.pending) >= self.depth


def split_request(req: IoRequest, geometry: FlashGeometry,
                  granularity: Optional[MappingGranularity] = None) -> list[tuple[int, tuple[int, ...]]]:
    """Split a request into (logical page, sector offsets) fragments.

    Requests must be sector aligned under either mapping granularity; the
    COARSE mapper turns sub-page fragments into read-modify-write.
    """
    sb = geometry.sector_bytes
    if req.length_bytes <= 0:
        raise UnalignedAccess(f"request {req.id}: length must be positive")
    if req.offset_bytes < 0 or req.offset_bytes % sb or req.length_bytes % sb:
        raise UnalignedAccess(
            f"request {req.id}: offset {req.offset_bytes} / length {req.length_bytes} "
            f"not multiples of {sb} B")
    spp = geometry.sectors_per_page
    first = req.offset_bytes // sb
    end = first + req.length_bytes // sb
    out = []
    lsn = first
    while lsn < end:
        lpn, s0 = divmod(lsn, spp)
        s1 = min(spp, s0 + end - lsn)
        out.append((lpn, tuple(range(s0, s1))))
        lsn += s1 - s0
    return out


class HostInterface:
    def __init__(self, engine: Engine, ftl: Ftl, flash: FlashBackend, metrics=None,
                 queue_count: int = 1, queue_depth: int = 256,
                 on_completion: Optional[Callable[[QueuePair], None]] = None) -> None:
        self.engine = engine
        self.ftl = ftl
        self.flash = flash
        self.metrics = metrics
        self.queues = [QueuePair(i, queue_depth) for i in range(max(1, queue_count))]
        self.on_completion = on_completion
        self._requests: dict[int, IoRequest] = {}
        self._outstanding: dict[int, int] = {}
        self._batch: list[IoRequest] = []
        self._dependents: dict[int, list[FlashTransaction]] = {}
        self._waiting: dict[int, int] = {}
        self.enqueued = 0
        self.completed = 0

    def enqueue(self, req: IoRequest, qp: Optional[QueuePair] = None) -> None:
        qp = qp or self.queues[req.queue_id % len(self.queues)]
        if qp.full:
            raise QueueFull(f"queue {qp.id} holds {qp.depth} requests")
        split_request(req, self.ftl.geometry)  # validates alignment before accepting
        end = (req.offset_bytes + req.length_bytes) // self.ftl.geometry.sector_bytes
        if end > self.ftl.logical_sectors:
            raise OutOfRange(f"request {req.id} ends at sector {end}, capacity "
                             f"{self.ftl.logical_sectors}")
        req.queue_id = qp.id
        req.submit_time = self.engine.now
        qp.pending[req.id] = req
        self._requests[req.id] = req
        self.enqueued += 1
        if not self._batch:
            self.engine.schedule(self.engine.now, self._dispatch)
        self._batch.append(req)

    def poll_completions(self, qp: QueuePair) -> list[IoRequest]:
        out = list(qp.completed)
        qp.completed.clear()
        if self.metrics is not None:
            for req in out:
                self.metrics.record(req)
        return out

    # ----------------------------------------------------------------- dispatch
    def _dispatch(self) -> None:
        batch, self._batch = self._batch, []
        ftl = self.ftl
        writes: list[WriteFragment] = []
        for req in batch:
            self._outstanding[req.id] = 0
            frags = split_request(req, ftl.geometry)
            if req.op is Op.WRITE:
                writes.extend(WriteFragment(lpn, secs, req.id) for lpn, secs in frags)
                continue
            if writes:
                # persist earlier same-tick writes so this read sees programmed data
                self._issue(ftl.write(writes, flush=True))
                writes = []
            plan = ftl.translate_read(frags)
            if self.metrics is not None and plan.unmapped:
                self.metrics.note_unmapped(len(plan.unmapped))
            self._issue([FlashTransaction(TxnKind.READ, g.location, g.sectors, Cause.HOST, (req.id,))
                         for g in plan.groups])
        if writes:
            self._issue(ftl.write(writes, flush=True))
        for req in batch:
            if self._outstanding[req.id] == 0:
                self._finish(req)

    def _issue(self, txns: list[FlashTransaction]) -> None:
        for txn in txns:
            for o in txn.origins:
                self._outstanding[o] += 1
            deps = [d for d in txn.after if d.complete_time is None]
            if not deps:
                self.flash.submit(txn, self._txn_done)
                continue
            self._waiting[id(txn)] = len(deps)
            for d in deps:
                self._dependents.setdefault(id(d), []).append(txn)

    def _txn_done(self, txn: FlashTransaction) -> None:
        if self.metrics is not None:
            self.metrics.record_txn(txn)
        for t in self._dependents.pop(id(txn), ()):
            self._waiting[id(t)] -= 1
            if self._waiting[id(t)] == 0:
                del self._waiting[id(t)]
                self.flash.submit(t, self._txn_done)
        for o in txn.origins:
            self._outstanding[o] -= 1
            if self._outstanding[o] == 0:
                self._finish(self._requests[o])

    def _finish(self, req: IoRequest) -> None:
        del self._outstanding[req.id]
        del self._requests[req.id]
        req.complete_time = self.engine.now
        qp = self.queues[req.queue_id]
        del qp.pending[req.id]
        qp.completed.append(req)
        self.completed += 1
        if self.on_completion is not None:
            self.on_completion(qp)
        else:
            self.poll_completions(qp)
