"""Wiring: one simulated device plus helpers to run traces and sweeps."""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, Iterator, Optional, Sequence

from .config import RunConfig
from .engine import Engine
from .flash import FlashBackend, FlashGeometry, FlashTiming
from .ftl import Allocation, Ftl, GcConfig, Mapping, Scheme, WriteFragment
from .gpu import GpuFrontend, KernelDescriptor, Policy, load_trace
from .host import HostInterface, IoRequest, Op
from .errors import IoFailure
from .metrics import CHART_FAMILIES, CSV_COLUMNS, MetricsCollector, MetricsReport, best_cells, render


class Device:
    """Engine, flash backend, FTL, host interface and metrics for one run."""

    def __init__(self, geometry: FlashGeometry = FlashGeometry(), timing: FlashTiming = FlashTiming(),
                 mapping: Mapping = Mapping.FINE, allocation: Allocation = Allocation.DYNAMIC,
                 scheme: Scheme = Scheme.CWDP, gc: GcConfig = GcConfig(),
                 queue_count: int = 1, queue_depth: int = 256, overprovision: float = 0.125,
                 record_intervals: bool = False) -> None:
        self.engine = Engine()
        self.flash = FlashBackend(self.engine, geometry, timing, record_intervals)
        self.ftl = Ftl(geometry, mapping, allocation, scheme, gc, overprovision)
        self.metrics = MetricsCollector(geometry.sector_bytes)
        self.host = HostInterface(self.engine, self.ftl, self.flash, self.metrics,
                                  queue_count, queue_depth)

    @classmethod
    def from_config(cls, cfg: RunConfig, queue_count: int = 1, **kw) -> "Device":
        return cls(cfg.geometry(), cfg.timing(), cfg.mapping, cfg.allocation, cfg.scheme, cfg.gc(),
                   queue_count, cfg.queue_depth, **kw)

    def precondition(self, extents: Iterable[tuple[int, int]]) -> int:
        """Write byte extents instantly (no simulated time, no counters).

        Used so reads in a trace hit programmed data. Returns sectors written.
        """
        geo = self.ftl.geometry
        seen = set()
        for off, length in extents:
            first = off // geo.sector_bytes
            for lsn in range(first, first - (-length // geo.sector_bytes)):
                if lsn < self.ftl.logical_sectors:
                    seen.add(lsn)
        spp = geo.sectors_per_page
        frags = []
        for lpn, group in itertools.groupby(sorted(seen), key=lambda s: s // spp):
            frags.append(WriteFragment(lpn, tuple(s % spp for s in group)))
        self.ftl.write(frags, flush=True)
        self.ftl.flush_gc()
        return len(seen)

    def run(self) -> int:
        return self.engine.run_until_idle()

    def report(self, sim_end_ns: Optional[int] = None, **labels) -> MetricsReport:
        end = self.engine.now if sim_end_ns is None else sim_end_ns
        return self.metrics.report(end, list(self.flash.plane_busy_ns), **labels)


def closed_loop(device: Device, requests: Iterable[IoRequest], depth: int) -> int:
    """Keep ``depth`` requests outstanding on queue 0 until ``requests`` runs dry.

    Returns the simulated end time.
    """
    it: Iterator[IoRequest] = iter(requests)
    host = device.host
    qp = host.queues[0]

    def top_up(_qp=None) -> None:
        if _qp is not None:
            host.poll_completions(_qp)
        while len(qp.pending) < depth:
            req = next(it, None)
            if req is None:
                return
            host.enqueue(req, qp)

    host.on_completion = top_up
    top_up()
    return device.run()


def workload_label(workloads: Iterable[str]) -> str:
    """Family names of the workloads in a run (``backprop.0`` -> ``backprop``)."""
    fams = sorted({w.split(".", 1)[0] for w in workloads})
    return "+".join(fams) if fams else "empty"


def read_extents(workloads: dict[str, list[KernelDescriptor]]) -> list[tuple[int, int]]:
    return [(io.offset, io.length) for ks in workloads.values() for k in ks
            for io in k.ios if io.op is Op.READ]


def run_workloads(cfg: RunConfig, workloads: dict[str, list[KernelDescriptor]],
                  precondition: bool = False, label: Optional[str] = None) -> MetricsReport:
    qcount = cfg.queue_count or max(1, len(workloads))
    dev = Device.from_config(cfg, qcount)
    if precondition:
        dev.precondition(read_extents(workloads))
    gpu = GpuFrontend(dev.engine, dev.host, workloads, cfg.scheduler())
    gpu.start()
    end = dev.run()
    return dev.report(end, workload=label or workload_label(workloads), policy=cfg.policy.value,
                      scheme=cfg.scheme.value, mapping=cfg.mapping.value,
                      allocation=cfg.allocation.value)


def run_traces(cfg: RunConfig, traces: Sequence[str], precondition: bool = False) -> MetricsReport:
    workloads: dict[str, list[KernelDescriptor]] = {}
    for path in traces:
        for name, ks in load_trace(path).items():
            workloads.setdefault(name, []).extend(ks)
    return run_workloads(cfg, workloads, precondition)


def _cell(args) -> MetricsReport:
    cfg, traces, precondition = args
    return run_traces(cfg, traces, precondition)


def sweep_configs(cfg: RunConfig, policies: Iterable[Policy], schemes: Iterable[Scheme]) -> list[RunConfig]:
    policies, schemes = list(policies), list(schemes)
    if not policies or not schemes:
        raise ValueError("sweep needs at least one policy and one scheme")
    return [cfg.replace(policy=p, scheme=s) for p in policies for s in schemes]


class CellFailure(RuntimeError):
    def __init__(self, label: str, cause: BaseException):
        super().__init__(f"cell {label}: {cause}")
        self.label = label
        self.__cause__ = cause


def sweep(cfg: RunConfig, traces: Sequence[str], policies: Iterable[Policy], schemes: Iterable[Scheme],
          precondition: bool = False, jobs: int = 1) -> list[MetricsReport]:
    """Run every policy x scheme cell on its own engine; reports sorted by label."""
    cells = sweep_configs(cfg, policies, schemes)
    args = [(c, list(traces), precondition) for c in cells]
    reports = []
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            futures = [pool.submit(_cell, a) for a in args]
            for c, fut in zip(cells, futures):
                try:
                    reports.append(fut.result())
                except Exception as exc:
                    raise CellFailure(f"{c.policy.value}/{c.scheme.value}", exc) from exc
    else:
        for c, a in zip(cells, args):
            try:
                reports.append(_cell(a))
            except Exception as exc:
                raise CellFailure(f"{c.policy.value}/{c.scheme.value}", exc) from exc
    return sorted(reports, key=lambda r: r.label)


def render_sweep(reports: Sequence[MetricsReport], out_dir: str) -> list[str]:
    """Render charts titled "by Combination" plus maxima.csv naming the best cell per metric."""
    written = render(reports, out_dir, suffix="by Combination")
    best = best_cells(reports)
    lines = ["metric,workload,policy,scheme,mapping,allocation,value"]
    for family, (attr, _, _) in CHART_FAMILIES.items():
        for _, r in sorted(best[family].items()):
            lines.append(",".join([attr, *r.label, r.row()[CSV_COLUMNS.index(attr)]]))
    path = os.path.join(out_dir, "maxima.csv")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    written.append(path)
    return written
