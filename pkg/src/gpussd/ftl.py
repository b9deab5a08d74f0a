"""Flash translation layer.

Maps logical sectors (FINE) or logical pages (COARSE) onto physical flash,
chooses physical planes statically from the logical address or dynamically
from a round-robin cursor, and reclaims space with greedy garbage collection.

Physical sector numbers (psn) are laid out as
``((plane * blocks + block) * pages + page) * sectors + sector`` where
``plane`` is the natural (channel, way, die, plane) linear index.
"""

from __future__ import annotations

import enum
import itertools
from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

from .errors import OutOfRange, OutOfSpace, UnalignedAccess
from .flash import Cause, FlashGeometry, FlashTransaction, PhysicalLocation, TxnKind

ENTRY_BYTES = 4


class Mapping(enum.Enum):
    COARSE = "coarse"
    FINE = "fine"


class Allocation(enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


class Scheme(enum.Enum):
    CWDP = "cwdp"
    CDWP = "cdwp"
    WCDP = "wcdp"


# axes varied fastest-first; 0=channel 1=way 2=die 3=plane
_SCHEME_AXES = {
    Scheme.CWDP: (0, 1, 2, 3),
    Scheme.CDWP: (0, 2, 1, 3),
    Scheme.WCDP: (1, 0, 2, 3),
}


@dataclass(frozen=True)
class MappingGranularity:
    mode: Mapping
    unit_bytes: int

    @classmethod
    def for_geometry(cls, mode: Mapping, geometry: FlashGeometry) -> "MappingGranularity":
        unit = geometry.page_bytes if mode is Mapping.COARSE else geometry.sector_bytes
        return cls(mode, unit)


@dataclass(frozen=True)
class GcConfig:
    free_block_threshold: float = 0.05
    enabled: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.free_block_threshold < 1:
            raise ValueError("free_block_threshold must be in (0, 1)")


class WriteFragment(NamedTuple):
    """Sectors of one logical page written by one request."""
    lpn: int
    sectors: tuple[int, ...]
    origin: Optional[int] = None
    tag: Optional[int] = None


class ReadGroup(NamedTuple):
    location: PhysicalLocation
    sectors: tuple[int, ...]
    lsns: tuple[int, ...]


class ReadPlan(NamedTuple):
    groups: list[ReadGroup]
    unmapped: list[int]


def plane_order(scheme: Scheme, geometry: FlashGeometry) -> list[tuple[int, int, int, int]]:
    """All plane coordinates, ordered so the scheme's leading axis varies fastest."""
    radix = (geometry.channels, geometry.ways_per_channel, geometry.dies_per_way, geometry.planes_per_die)
    axes = _SCHEME_AXES[scheme]
    out = []
    for i in range(geometry.planes):
        coord = [0, 0, 0, 0]
        for axis in axes:
            i, coord[axis] = divmod(i, radix[axis])
        out.append(tuple(coord))
    return out


def table_footprint_bytes(granularity: MappingGranularity, capacity_bytes: int,
                          entry_bytes: int = ENTRY_BYTES) -> int:
    return capacity_bytes // granularity.unit_bytes * entry_bytes


@dataclass(eq=False)
class _OpenPage:
    plane: int
    block: int  # global block id
    page: int
    cause: Cause
    filled: int = 0
    origins: dict = field(default_factory=dict)  # ordered set
    deps: list = field(default_factory=list)


class _PlaneFull(Exception):
    pass


_FREE, _ACTIVE, _FULL = 0, 1, 2


class _PlaneState:
    __slots__ = ("free", "active", "next_page", "open", "gc_open")

    def __init__(self, blocks: Iterable[int]) -> None:
        self.free = deque(blocks)
        self.active: Optional[int] = None
        self.next_page = 0
        self.open: Optional[_OpenPage] = None
        # relocation frontier; stays open across GC passes so relocation packs densely
        self.gc_open: Optional[_OpenPage] = None


class Ftl:
    def __init__(self, geometry: FlashGeometry, mapping: Mapping = Mapping.FINE,
                 allocation: Allocation = Allocation.DYNAMIC, scheme: Scheme = Scheme.CWDP,
                 gc: GcConfig = GcConfig(), overprovision: float = 0.125) -> None:
        if not 0 <= overprovision < 1:
            raise ValueError("overprovision must be in [0, 1)")
        g = self.geometry = geometry
        self.mapping = mapping
        self.allocation = allocation
        self.scheme = scheme
        self.gc = gc
        self.granularity = MappingGranularity.for_geometry(mapping, geometry)
        self.S = g.sectors_per_page
        self.P = g.pages_per_block
        self.B = g.blocks_per_plane
        self.p = g.planes
        self.order = [g.plane_index(*c) for c in plane_order(scheme, g)]
        self._coords = [g.plane_coords(i) for i in range(g.planes)]
        self.logical_pages = int(g.total_pages * (1 - overprovision))
        if self.logical_pages < 1:
            raise ValueError("geometry too small for any logical capacity")
        self.logical_sectors = self.logical_pages * self.S
        units = self.logical_sectors if mapping is Mapping.FINE else self.logical_pages
        self.l2p = array("q", [-1]) * units
        n = g.total_sectors
        self.p2l = array("q", [-1]) * n
        self.valid = bytearray(n)
        self.content = array("q", [0]) * n
        nblocks = self.p * self.B
        self.block_valid = array("l", [0]) * nblocks
        self.block_state = bytearray(nblocks)
        self.planes = [_PlaneState(range(pl * self.B, (pl + 1) * self.B)) for pl in range(self.p)]
        self.cursor = 0
        self._in_gc = False
        self._out: list[FlashTransaction] = []
        self._versions = itertools.count(1)
        self.invalidated_sectors = 0
        self.gc_runs = 0

    # ------------------------------------------------------------------ helpers
    @property
    def capacity_bytes(self) -> int:
        return self.logical_pages * self.geometry.page_bytes

    @property
    def table_bytes(self) -> int:
        return table_footprint_bytes(self.granularity, self.capacity_bytes)

    def location(self, psn: int) -> PhysicalLocation:
        rest, sector = divmod(psn, self.S)
        rest, page = divmod(rest, self.P)
        plane, block = divmod(rest, self.B)
        return PhysicalLocation(*self._coords[plane], block, page, sector)

    def _loc_of_page(self, gblock: int, page: int) -> PhysicalLocation:
        plane, block = divmod(gblock, self.B)
        return PhysicalLocation(*self._coords[plane], block, page, 0)

    def _check_fragment(self, lpn: int, sectors: Sequence[int]) -> None:
        if not sectors or any(not 0 <= s < self.S for s in sectors):
            raise UnalignedAccess(f"sector set {sectors} is not inside one page")
        if not 0 <= lpn < self.logical_pages:
            raise OutOfRange(f"logical page {lpn} beyond {self.logical_pages}")

    def _emit(self, txn: FlashTransaction) -> FlashTransaction:
        self._out.append(txn)
        return txn

    def _drain(self) -> list[FlashTransaction]:
        out, self._out = self._out, []
        return out

    def _invalidate(self, psn: int) -> None:
        if self.valid[psn]:
            self.valid[psn] = 0
            self.p2l[psn] = -1
            self.block_valid[psn // (self.S * self.P)] -= 1

    # --------------------------------------------------------------- allocation
    def _take_block(self, pl: int) -> None:
        st = self.planes[pl]
        # host writes leave one erased block per plane so GC always has room to relocate
        reserve = 1 if self.gc.enabled and not self._in_gc else 0
        if reserve and len(st.free) <= reserve:
            self._collect(pl, reserve + 1)
        if len(st.free) <= reserve:
            if self._in_gc:
                raise OutOfSpace(f"plane {pl}: no erased block for relocation")
            raise _PlaneFull(pl)
        if st.active is not None:
            self.block_state[st.active] = _FULL
        blk = st.free.popleft()
        self.block_state[blk] = _ACTIVE
        st.active = blk
        st.next_page = 0
        if (self.gc.enabled and not self._in_gc
                and len(st.free) < self.gc.free_block_threshold * self.B):
            self._collect(pl)

    def _open_page(self, pl: int, cause: Cause) -> _OpenPage:
        st = self.planes[pl]
        slot = "gc_open" if cause is Cause.GC else "open"
        while getattr(st, slot) is None:
            if st.active is not None and st.next_page < self.P:
                setattr(st, slot, _OpenPage(pl, st.active, st.next_page, cause))
                st.next_page += 1
            else:
                self._take_block(pl)
        return getattr(st, slot)

    def _close(self, op: _OpenPage) -> None:
        st = self.planes[op.plane]
        if st.open is op:
            st.open = None
        else:
            st.gc_open = None
        if op.filled:
            self._emit(FlashTransaction(
                TxnKind.PROGRAM, self._loc_of_page(op.block, op.page),
                tuple(range(op.filled)), cause=op.cause, origins=tuple(op.origins),
                after=op.deps))
        if (op.cause is Cause.HOST and self.allocation is Allocation.DYNAMIC
                and op.plane == self.order[self.cursor]):
            self.cursor = (self.cursor + 1) % self.p

    def _place(self, pl: int, lsn: int, tag: int, origin, dep, cause: Cause) -> None:
        op = self._open_page(pl, cause)
        psn = ((op.block * self.P) + op.page) * self.S + op.filled
        op.filled += 1
        self.valid[psn] = 1
        self.p2l[psn] = lsn
        self.content[psn] = tag
        self.block_valid[op.block] += 1
        self.l2p[lsn] = psn
        if origin is not None:
            op.origins[origin] = None
        if dep is not None and (not op.deps or op.deps[-1] is not dep):
            op.deps.append(dep)
        if op.filled == self.S:
            self._close(op)

    def _host_planes(self, lpn: int):
        """Candidate planes for a host write, in preference order."""
        if self.allocation is Allocation.STATIC:
            yield self.order[lpn % self.p]
            return
        for _ in range(self.p):
            yield self.order[self.cursor]
            self.cursor = (self.cursor + 1) % self.p

    def _with_space(self, lpn: int, action) -> None:
        for pl in self._host_planes(lpn):
            try:
                action(pl)
                return
            except _PlaneFull:
                continue
        raise OutOfSpace(f"no erased page available for logical page {lpn}")

    # ------------------------------------------------------------------- writes
    def write(self, fragments: Iterable[WriteFragment], flush: bool = False) -> list[FlashTransaction]:
        """Apply host writes; returns the flash transactions they cause.

        Under FINE mapping new sectors are packed into the active page and a
        PROGRAM is emitted once it fills (or on :meth:`flush`). Under COARSE
        mapping, fragments of one logical page in the same call are merged.
        """
        frags = list(fragments)
        for f in frags:
            self._check_fragment(f.lpn, f.sectors)
        if self.mapping is Mapping.FINE:
            for f in frags:
                tag = f.tag if f.tag is not None else next(self._versions)
                for s in f.sectors:
                    self._write_sector(f.lpn * self.S + s, tag, f.origin)
        else:
            # disjoint fragments of one page share a program; an overlap starts a new one
            merged: dict[int, list] = {}
            pending: list[tuple[int, list]] = []
            for f in frags:
                tag = f.tag if f.tag is not None else next(self._versions)
                entry = merged.get(f.lpn)
                if entry is None or any(s in entry[0] for s in f.sectors):
                    entry = merged[f.lpn] = [{}, {}]
                    pending.append((f.lpn, entry))
                for s in f.sectors:
                    entry[0][s] = tag
                if f.origin is not None:
                    entry[1][f.origin] = None
            for lpn, (tags, origins) in pending:
                self._with_space(lpn, lambda pl: self._write_page(pl, lpn, tags, tuple(origins)))
        if flush:
            self._flush_open()
        return self._drain()

    def flush(self) -> list[FlashTransaction]:
        """Program every partially filled host page."""
        self._flush_open()
        return self._drain()

    def _flush_open(self) -> None:
        for pl in self.order:
            op = self.planes[pl].open
            if op is not None and op.cause is Cause.HOST:
                self._close(op)

    def _write_sector(self, lsn: int, tag: int, origin) -> None:
        old = self.l2p[lsn]
        if old >= 0:
            self._invalidate(old)
            self.invalidated_sectors += 1
            self.l2p[lsn] = -1
        if self.allocation is Allocation.DYNAMIC:
            # keep filling the cursor's open page before moving on
            op = self.planes[self.order[self.cursor]].open
            if op is not None and op.cause is Cause.HOST:
                self._place(op.plane, lsn, tag, origin, None, Cause.HOST)
                return
        lpn = lsn // self.S
        self._with_space(lpn, lambda pl: self._place(pl, lsn, tag, origin, None, Cause.HOST))

    def _write_page(self, pl: int, lpn: int, tags: dict, origins: tuple) -> None:
        S = self.S
        op = self._open_page(pl, Cause.HOST)
        old = self.l2p[lpn]
        read = None
        if old >= 0 and len(tags) < S:
            read = self._emit(FlashTransaction(
                TxnKind.READ, self.location(old * S), tuple(range(S)), cause=Cause.RMW,
                origins=origins))
        base = ((op.block * self.P) + op.page) * S
        for s in range(S):
            psn = base + s
            if s in tags:
                tag = tags[s]
            elif old >= 0:
                tag = self.content[old * S + s]
            else:
                tag = 0
            self.valid[psn] = 1
            self.p2l[psn] = lpn * S + s
            self.content[psn] = tag
        self.block_valid[op.block] += S
        if old >= 0:
            for s in range(S):
                self._invalidate(old * S + s)
            self.invalidated_sectors += len(tags)
        self.l2p[lpn] = base // S
        op.filled = S
        op.origins.update(dict.fromkeys(origins))
        if read is not None:
            op.deps.append(read)
        self._close(op)

    # -------------------------------------------------------------------- reads
    def translate_read(self, fragments: Iterable[tuple[int, Sequence[int]]]) -> ReadPlan:
        """Resolve (lpn, sectors) fragments to per-physical-page read groups."""
        S = self.S
        groups: dict[int, list] = {}
        unmapped: list[int] = []
        for lpn, sectors in fragments:
            self._check_fragment(lpn, sectors)
            for s in sectors:
                lsn = lpn * S + s
                if self.mapping is Mapping.FINE:
                    psn = self.l2p[lsn]
                else:
                    ppn = self.l2p[lpn]
                    psn = -1 if ppn < 0 else ppn * S + s
                if psn < 0:
                    unmapped.append(lsn)
                    continue
                g = groups.setdefault(psn // S, [[], []])
                g[0].append(psn % S)
                g[1].append(lsn)
        out = [ReadGroup(self.location(ppn * S), tuple(sec), tuple(lsns))
               for ppn, (sec, lsns) in groups.items()]
        return ReadPlan(out, unmapped)

    def read_content(self, lsn: int) -> int:
        """Version tag currently stored for a logical sector (0 when unwritten)."""
        if self.mapping is Mapping.FINE:
            psn = self.l2p[lsn]
        else:
            ppn = self.l2p[lsn // self.S]
            psn = -1 if ppn < 0 else ppn * self.S + lsn % self.S
        return 0 if psn < 0 else self.content[psn]

    # ----------------------------------------------------------------------- gc
    def free_fraction(self, pl: int) -> float:
        return len(self.planes[pl].free) / self.B

    def _victim(self, pl: int) -> Optional[int]:
        st = self.planes[pl]
        busy = {op.block for op in (st.open, st.gc_open) if op is not None}
        best = None
        for blk in range(pl * self.B, (pl + 1) * self.B):
            if self.block_state[blk] == _FULL and blk not in busy:
                if best is None or self.block_valid[blk] < self.block_valid[best]:
                    best = blk
        return best

    def _collect(self, pl: int, want: Optional[float] = None) -> None:
        """Relocate greedy victims until the plane has ``want`` erased blocks."""
        if want is None:
            want = self.gc.free_block_threshold * self.B
        self._in_gc = True
        try:
            while len(self.planes[pl].free) < want:
                victim = self._victim(pl)
                if victim is None or self.block_valid[victim] >= self.S * self.P:
                    break
                self._relocate(pl, victim)
        finally:
            self._in_gc = False

    def flush_gc(self) -> list[FlashTransaction]:
        """Program every partially filled relocation page."""
        for pl in self.order:
            if self.planes[pl].gc_open is not None:
                self._close(self.planes[pl].gc_open)
        return self._drain()

    def garbage_collect(self, plane: int, force: bool = False) -> list[FlashTransaction]:
        """Reclaim the plane's block with the fewest valid sectors.

        Runs only when the plane's erased-block fraction is under the
        threshold unless ``force`` is set.
        """
        if not force and self.free_fraction(plane) >= self.gc.free_block_threshold:
            return []
        victim = self._victim(plane)
        if victim is None:
            return []
        self._in_gc = True
        try:
            self._relocate(plane, victim)
            if self.planes[plane].gc_open is not None:
                self._close(self.planes[plane].gc_open)
        finally:
            self._in_gc = False
        return self._drain()

    def _relocate(self, pl: int, victim: int) -> None:
        S, P = self.S, self.P
        self.gc_runs += 1
        base = victim * P * S
        reads = []
        for page in range(P):
            pbase = base + page * S
            live = [s for s in range(S) if self.valid[pbase + s]]
            if not live:
                continue
            read = self._emit(FlashTransaction(
                TxnKind.READ, self._loc_of_page(victim, page), tuple(live), cause=Cause.GC))
            reads.append(read)
            if self.mapping is Mapping.FINE:
                for s in live:
                    psn = pbase + s
                    lsn, tag = self.p2l[psn], self.content[psn]
                    self._invalidate(psn)
                    self._place(pl, lsn, tag, None, read, Cause.GC)
            else:
                self._relocate_page(pl, pbase, read)
        self._emit(FlashTransaction(TxnKind.ERASE, self._loc_of_page(victim, 0), cause=Cause.GC,
                                    after=reads))
        assert self.block_valid[victim] == 0
        for psn in range(base, base + P * S):
            self.p2l[psn] = -1
        self.block_state[victim] = _FREE
        self.planes[pl].free.append(victim)

    def _relocate_page(self, pl: int, pbase: int, read: FlashTransaction) -> None:
        S = self.S
        op = self._open_page(pl, Cause.GC)
        if op.filled:
            self._close(op)
            op = self._open_page(pl, Cause.GC)
        nbase = ((op.block * self.P) + op.page) * S
        lpn = self.p2l[pbase] // S
        for s in range(S):
            self.valid[nbase + s] = 1
            self.p2l[nbase + s] = lpn * S + s
            self.content[nbase + s] = self.content[pbase + s]
            self._invalidate(pbase + s)
        self.block_valid[op.block] += S
        self.l2p[lpn] = nbase // S
        op.filled = S
        op.deps.append(read)
        self._close(op)
