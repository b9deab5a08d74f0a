"""Per-run counters, response-time distribution and report rendering."""

from __future__ import annotations

import csv
import io
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import IoFailure, ZeroSpan
from .flash import Cause, FlashTransaction, TxnKind

CSV_COLUMNS = (
    "workload", "policy", "scheme", "mapping", "allocation", "iops",
    "resp_mean_ns", "resp_p50_ns", "resp_p99_ns", "resp_max_ns", "sim_end_ns",
    "reads", "programs", "erases", "rmw_reads", "waf",
)

CHART_FAMILIES = {
    "iops": ("iops", "IOPS", True),
    "response": ("resp_mean_ns", "Device Response Time (mean, ns)", False),
    "end_time": ("sim_end_ns", "Simulation End Time (ns)", False),
}


def compute_iops(completed: int, span_ns: int) -> float:
    if completed == 0:
        return 0.0
    if span_ns <= 0:
        raise ZeroSpan("IOPS needs a positive time span")
    return completed * 1e9 / span_ns


class LogHistogram:
    """Fixed-bin log-scale histogram; bins grow by ``ratio`` (2 % by default)."""

    def __init__(self, ratio: float = 1.02) -> None:
        self.ratio = ratio
        self._log = math.log(ratio)
        self.bins: Counter = Counter()
        self.count = 0
        self.total = 0
        self.min: Optional[int] = None
        self.max: Optional[int] = None

    def _bin(self, x: int) -> int:
        return -1 if x < 1 else int(math.log(x) / self._log)

    def add(self, x: int) -> None:
        self.bins[self._bin(x)] += 1
        self.count += 1
        self.total += x
        self.min = x if self.min is None else min(self.min, x)
        self.max = x if self.max is None else max(self.max, x)

    def merge(self, other: "LogHistogram") -> None:
        self.bins.update(other.bins)
        self.count += other.count
        self.total += other.total
        for v in (other.min, other.max):
            if v is not None:
                self.min = v if self.min is None else min(self.min, v)
                self.max = v if self.max is None else max(self.max, v)

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    def quantile(self, q: float) -> float:
        if not self.count:
            return 0.0
        rank = max(1, math.ceil(q * self.count))
        seen = 0
        for b in sorted(self.bins):
            seen += self.bins[b]
            if seen >= rank:
                est = 0.0 if b < 0 else self.ratio ** (b + 0.5)
                return float(min(max(est, self.min), self.max))
        return float(self.max)


@dataclass
class MetricsReport:
    workload: str = ""
    policy: str = ""
    scheme: str = ""
    mapping: str = ""
    allocation: str = ""
    iops: float = 0.0
    resp_mean_ns: float = 0.0
    resp_p50_ns: float = 0.0
    resp_p99_ns: float = 0.0
    resp_max_ns: int = 0
    sim_end_ns: int = 0
    reads: int = 0
    programs: int = 0
    erases: int = 0
    rmw_reads: int = 0
    waf: float = 0.0
    completed: int = 0
    per_plane_busy_ns: list = field(default_factory=list)

    @property
    def label(self) -> tuple[str, ...]:
        return (self.workload, self.policy, self.scheme, self.mapping, self.allocation)

    def row(self) -> list[str]:
        return [
            self.workload, self.policy, self.scheme, self.mapping, self.allocation,
            f"{self.iops:.3f}", f"{self.resp_mean_ns:.1f}", f"{self.resp_p50_ns:.0f}",
            f"{self.resp_p99_ns:.0f}", str(self.resp_max_ns), str(self.sim_end_ns),
            str(self.reads), str(self.programs), str(self.erases), str(self.rmw_reads),
            f"{self.waf:.4f}",
        ]


class MetricsCollector:
    def __init__(self, sector_bytes: int = 4096) -> None:
        self.sector_bytes = sector_bytes
        self.response = LogHistogram()
        self.completed = 0
        self.host_sectors_written = 0
        self.host_sectors_read = 0
        self.last_completion = 0
        self.txn_counts: Counter = Counter()
        self.rmw_reads = 0
        self.sectors_programmed = 0
        self.host_flash_read_sectors = 0
        self.unmapped_sectors = 0

    def record(self, req) -> None:
        if req.complete_time is None:
            raise ValueError(f"request {req.id} has not completed")
        self.completed += 1
        self.response.add(req.response_ns)
        self.last_completion = max(self.last_completion, req.complete_time)
        sectors = req.length_bytes // self.sector_bytes
        if req.op.value == "W":
            self.host_sectors_written += sectors
        else:
            self.host_sectors_read += sectors

    def record_txn(self, txn: FlashTransaction) -> None:
        self.txn_counts[txn.kind] += 1
        if txn.kind is TxnKind.PROGRAM:
            self.sectors_programmed += len(txn.payload_sectors)
        elif txn.kind is TxnKind.READ:
            if txn.cause is Cause.RMW:
                self.rmw_reads += 1
            elif txn.cause is Cause.HOST:
                self.host_flash_read_sectors += len(txn.payload_sectors)

    def note_unmapped(self, sectors: int) -> None:
        self.unmapped_sectors += sectors

    def merge(self, other: "MetricsCollector") -> None:
        self.response.merge(other.response)
        self.txn_counts.update(other.txn_counts)
        for name in ("completed", "host_sectors_written", "host_sectors_read", "rmw_reads",
                     "sectors_programmed", "host_flash_read_sectors", "unmapped_sectors"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.last_completion = max(self.last_completion, other.last_completion)

    @property
    def waf(self) -> float:
        if not self.host_sectors_written:
            return 0.0
        return self.sectors_programmed / self.host_sectors_written

    def report(self, sim_end_ns: int = 0, per_plane_busy_ns: Sequence[int] = (), **labels) -> MetricsReport:
        h = self.response
        return MetricsReport(
            iops=compute_iops(self.completed, sim_end_ns),
            resp_mean_ns=h.mean,
            resp_p50_ns=h.quantile(0.5),
            resp_p99_ns=h.quantile(0.99),
            resp_max_ns=h.max or 0,
            sim_end_ns=sim_end_ns,
            reads=self.txn_counts[TxnKind.READ],
            programs=self.txn_counts[TxnKind.PROGRAM],
            erases=self.txn_counts[TxnKind.ERASE],
            rmw_reads=self.rmw_reads,
            waf=self.waf,
            completed=self.completed,
            per_plane_busy_ns=list(per_plane_busy_ns),
            **labels,
        )


# ---------------------------------------------------------------------- render
def csv_text(reports: Iterable[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(reports, key=lambda r: r.label):
        w.writerow(r.row())
    return buf.getvalue()


def _write(path: str, data: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def best_cells(reports: Sequence[MetricsReport]) -> dict[str, dict[str, MetricsReport]]:
    """Per workload and chart family, the report with the best value."""
    out: dict[str, dict[str, MetricsReport]] = {}
    for family, (attr, _, higher) in CHART_FAMILIES.items():
        per_wl: dict[str, MetricsReport] = {}
        for r in sorted(reports, key=lambda r: r.label):
            cur = per_wl.get(r.workload)
            v = getattr(r, attr)
            if cur is None or (v > getattr(cur, attr) if higher else v < getattr(cur, attr)):
                per_wl[r.workload] = r
        out[family] = per_wl
    return out


def _cell_name(r: MetricsReport, varying: Sequence[int]) -> str:
    parts = [r.label[i] for i in varying]
    return "/".join(parts) if parts else "run"


def chart_svg(reports: Sequence[MetricsReport], family: str, suffix: str = "by Workload") -> str:
    """Grouped bar chart (groups = workloads, bars = configuration cells) as SVG text."""
    from matplotlib import rcParams
    from matplotlib.figure import Figure

    attr, ylabel, _ = CHART_FAMILIES[family]
    reports = sorted(reports, key=lambda r: r.label)
    workloads = sorted({r.workload for r in reports})
    varying = [i for i in range(1, 5) if len({r.label[i] for r in reports}) > 1]
    cells = sorted({_cell_name(r, varying) for r in reports})
    best = best_cells(reports)[family]
    fig = Figure(figsize=(max(6.0, 1.2 * len(workloads) * max(1, len(cells)) ** 0.5), 4.0))
    ax = fig.add_subplot()
    width = 0.8 / max(1, len(cells))
    for ci, cell in enumerate(cells):
        xs, ys, hatches = [], [], []
        for wi, wl in enumerate(workloads):
            for r in reports:
                if r.workload == wl and _cell_name(r, varying) == cell:
                    xs.append(wi + ci * width - 0.4 + width / 2)
                    ys.append(getattr(r, attr))
                    hatches.append("//" if best.get(wl) is r and len(cells) > 1 else "")
        bars = ax.bar(xs, ys, width=width, label=cell)
        for bar, hatch in zip(bars, hatches):
            bar.set_hatch(hatch)
    ax.set_xticks(range(len(workloads)))
    ax.set_xticklabels(workloads)
    ax.set_ylabel(ylabel)
    ax.set_title(f"{ylabel.split(' (')[0]} {suffix}")
    if len(cells) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    buf = io.StringIO()
    old_salt = rcParams["svg.hashsalt"]
    rcParams["svg.hashsalt"] = "gpussd"
    try:
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    finally:
        rcParams["svg.hashsalt"] = old_salt
    return buf.getvalue()


def render(reports: Sequence[MetricsReport], out_dir: str, formats: Iterable[str] = ("csv", "chart"),
           suffix: str = "by Workload") -> list[str]:
    """Write report.csv and/or one SVG chart per metric family into ``out_dir``."""
    if not reports:
        raise ValueError("render needs at least one report")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc
    written = []
    formats = set(formats)
    if "csv" in formats:
        path = os.path.join(out_dir, "report.csv")
        _write(path, csv_text(reports))
        written.append(path)
    if "chart" in formats:
        for family in CHART_FAMILIES:
            path = os.path.join(out_dir, f"{family}.svg")
            _write(path, chart_svg(reports, family, suffix))
            written.append(path)
    return written
