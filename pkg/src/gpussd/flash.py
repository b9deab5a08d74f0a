"""Flash backend timing: geometry, per-channel buses and per-plane arrays."""

from __future__ import annotations

import enum
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple, Optional

from .engine import Engine
from .errors import OutOfGeometry


@dataclass(frozen=True)
class FlashGeometry:
    channels: int = 8
    ways_per_channel: int = 4
    dies_per_way: int = 2
    planes_per_die: int = 2
    blocks_per_plane: int = 64
    pages_per_block: int = 64
    page_bytes: int = 16384
    sector_bytes: int = 4096

    def __post_init__(self) -> None:
        for name in ("channels", "ways_per_channel", "dies_per_way", "planes_per_die",
                     "blocks_per_plane", "pages_per_block", "page_bytes", "sector_bytes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.page_bytes % self.sector_bytes:
            raise ValueError("page_bytes must be a multiple of sector_bytes")

    @property
    def planes(self) -> int:
        return self.channels * self.ways_per_channel * self.dies_per_way * self.planes_per_die

    @property
    def sectors_per_page(self) -> int:
        return self.page_bytes // self.sector_bytes

    @property
    def sectors_per_block(self) -> int:
        return self.pages_per_block * self.sectors_per_page

    @property
    def pages_per_plane(self) -> int:
        return self.blocks_per_plane * self.pages_per_block

    @property
    def total_pages(self) -> int:
        return self.planes * self.pages_per_plane

    @property
    def total_sectors(self) -> int:
        return self.total_pages * self.sectors_per_page

    @property
    def capacity_bytes(self) -> int:
        return self.total_pages * self.page_bytes

    def plane_index(self, channel: int, way: int, die: int, plane: int) -> int:
        """Linear plane id in natural (channel, way, die, plane) order."""
        return ((channel * self.ways_per_channel + way) * self.dies_per_way + die) * self.planes_per_die + plane

    def plane_coords(self, index: int) -> tuple[int, int, int, int]:
        index, plane = divmod(index, self.planes_per_die)
        index, die = divmod(index, self.dies_per_way)
        channel, way = divmod(index, self.ways_per_channel)
        return channel, way, die, plane


@dataclass(frozen=True)
class FlashTiming:
    read_ns: int = 50_000
    program_ns: int = 660_000
    erase_ns: int = 3_500_000
    channel_bytes_per_ns: float = 0.4
    command_overhead_ns: int = 200

    def __post_init__(self) -> None:
        if min(self.read_ns, self.program_ns, self.erase_ns) <= 0:
            raise ValueError("read/program/erase latencies must be positive")
        if self.channel_bytes_per_ns <= 0:
            raise ValueError("channel_bytes_per_ns must be positive")
        if self.command_overhead_ns < 0:
            raise ValueError("command_overhead_ns must be >= 0")

    @property
    def bus_rate(self) -> Fraction:
        # decimal string keeps 0.4 exactly 2/5, so byte/rate ceilings are exact
        return Fraction(str(self.channel_bytes_per_ns))


class PhysicalLocation(NamedTuple):
    channel: int
    way: int
    die: int
    plane: int
    block: int
    page: int
    sector: int = 0


class TxnKind(enum.Enum):
    READ = "read"
    PROGRAM = "program"
    ERASE = "erase"


class Cause(enum.Enum):
    HOST = "host"
    RMW = "rmw"
    GC = "gc"


@dataclass(eq=False)
class FlashTransaction:
    kind: TxnKind
    target: PhysicalLocation
    payload_sectors: tuple[int, ...] = ()
    cause: Cause = Cause.HOST
    origins: tuple[int, ...] = ()
    after: list["FlashTransaction"] = field(default_factory=list)
    issue_time: Optional[int] = None
    complete_time: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind is not TxnKind.ERASE and not self.payload_sectors:
            raise ValueError(f"{self.kind.value} transaction needs at least one sector")


def transfer_ns(geometry: FlashGeometry, timing: FlashTiming, sector_count: int) -> int:
    """Bus occupancy for moving ``sector_count`` sectors over one channel."""
    if not 1 <= sector_count <= geometry.sectors_per_page:
        raise ValueError(f"sector_count {sector_count} outside 1..{geometry.sectors_per_page}")
    return timing.command_overhead_ns + math.ceil(
        Fraction(sector_count * geometry.sector_bytes) / timing.bus_rate)


class _Bus:
    """Busy intervals of one channel, sorted and disjoint; supports backfill."""

    def __init__(self) -> None:
        self.starts: list[int] = []
        self.ends: list[int] = []

    def reserve(self, ready: int, duration: int, now: int) -> int:
        # intervals that ended before `now` can never constrain a future request
        drop = bisect_right(self.ends, now)
        if drop:
            del self.starts[:drop]
            del self.ends[:drop]
        i = bisect_right(self.ends, ready)
        t = ready
        while i < len(self.starts) and t + duration > self.starts[i]:
            t = max(t, self.ends[i])
            i += 1
        self.starts.insert(i, t)
        self.ends.insert(i, t + duration)
        return t


class FlashBackend:
    """Services flash transactions against two serialized resource kinds.

    A channel bus is occupied for the data transfer; a plane is occupied for
    the array operation. PROGRAM moves data over the bus first, READ senses
    first and holds the plane until its data has left over the bus.
    """

    def __init__(self, engine: Engine, geometry: FlashGeometry, timing: FlashTiming,
                 record_intervals: bool = False) -> None:
        self.engine = engine
        self.geometry = geometry
        self.timing = timing
        self._xfer = [0] + [transfer_ns(geometry, timing, n) for n in range(1, geometry.sectors_per_page + 1)]
        self._buses = [_Bus() for _ in range(geometry.channels)]
        self._plane_free = [0] * geometry.planes
        self.plane_busy_ns = [0] * geometry.planes
        self.record_intervals = record_intervals
        self.bus_log: list[list[tuple[int, int]]] = [[] for _ in range(geometry.channels)]
        self.plane_log: list[list[tuple[int, int]]] = [[] for _ in range(geometry.planes)]

    def _check(self, loc: PhysicalLocation) -> int:
        g = self.geometry
        bounds = (g.channels, g.ways_per_channel, g.dies_per_way, g.planes_per_die,
                  g.blocks_per_plane, g.pages_per_block, g.sectors_per_page)
        if any(not 0 <= v < b for v, b in zip(loc, bounds)):
            raise OutOfGeometry(f"{loc} outside geometry")
        return g.plane_index(loc.channel, loc.way, loc.die, loc.plane)

    def submit(self, txn: FlashTransaction,
               on_complete: Optional[Callable[[FlashTransaction], None]] = None) -> int:
        """Reserve resources for ``txn`` now and schedule its completion event."""
        plane = self._check(txn.target)
        spp = self.geometry.sectors_per_page
        if any(not 0 <= s < spp for s in txn.payload_sectors):
            raise OutOfGeometry(f"sector index outside page in {txn.payload_sectors}")
        now = self.engine.now
        bus = self._buses[txn.target.channel]
        t = self.timing
        if txn.kind is TxnKind.PROGRAM:
            xfer = self._xfer[len(txn.payload_sectors)]
            bus_start = bus.reserve(now, xfer, now)
            array_start = max(bus_start + xfer, self._plane_free[plane])
            done = array_start + t.program_ns
            self._note(txn.target.channel, plane, (bus_start, bus_start + xfer), (array_start, done))
        elif txn.kind is TxnKind.READ:
            xfer = self._xfer[len(txn.payload_sectors)]
            array_start = max(now, self._plane_free[plane])
            bus_start = bus.reserve(array_start + t.read_ns, xfer, now)
            done = bus_start + xfer
            self._note(txn.target.channel, plane, (bus_start, done), (array_start, done))
        else:
            array_start = max(now, self._plane_free[plane])
            done = array_start + t.erase_ns
            self._note(txn.target.channel, plane, None, (array_start, done))
        self._plane_free[plane] = done
        txn.issue_time = now
        self.engine.schedule(done, self._complete, txn, on_complete)
        return done

    def _note(self, channel: int, plane: int, bus_iv, plane_iv) -> None:
        self.plane_busy_ns[plane] += plane_iv[1] - plane_iv[0]
        if self.record_intervals:
            if bus_iv is not None:
                self.bus_log[channel].append(bus_iv)
            self.plane_log[plane].append(plane_iv)

    def _complete(self, txn: FlashTransaction, on_complete) -> None:
        txn.complete_time = self.engine.now
        if on_complete is not None:
            on_complete(txn)
