"""Seeded synthetic trace generators.

Every generator takes ``(kernels, seed, **params)`` and returns a flat list
of :class:`KernelDescriptor`. Offsets stay inside ``span_bytes`` (default
256 MiB) and are aligned to 4 KiB.

Generators
----------
rand-write-4k / rand-read-4k
    One 4 KiB request per kernel at a uniform random offset.
seq
    One ``io_bytes`` (64 KiB) request per kernel at consecutive offsets;
    ``op`` selects R or W.
backprop
    ``streams`` concurrent workloads of small-grid kernels with regular,
    low-variance compute and reads walking a private region.
hotspot
    Bursty: every ``burst_every``-th kernel issues ``burst`` random 4 KiB
    writes at once, the rest are compute only.
lavamd
    Large grids, mixed reads and writes of 4-64 KiB, spread over the span.
bimodal
    One kernel name whose exec time is drawn from two modes
    (``low_ns`` / ``high_ns``), no I/O.
grouped
    ``groups`` kernel names, each with its own normal exec-time distribution
    (means spread log-uniformly, coefficient of variation ``cv``), no I/O.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import UnknownGenerator
from .gpu import KernelDescriptor, KernelIo
from .host import Op

SECTOR = 4096
DEFAULT_SPAN = 256 * 1024 * 1024


def _offsets(rng, n, span, size=SECTOR):
    slots = max(1, (span - size) // SECTOR + 1)
    return rng.integers(0, slots, size=n) * SECTOR


def _exec(rng, n, mean, cv):
    return np.maximum(1, np.rint(rng.normal(mean, mean * cv, size=n))).astype(np.int64)


def _random_4k(op: Op):
    def gen(kernels: int, seed: int, span_bytes: int = DEFAULT_SPAN, exec_ns: int = 2_000,
            grid: int = 256, block: int = 256, workload: str | None = None) -> list[KernelDescriptor]:
        rng = np.random.default_rng(seed)
        offs = _offsets(rng, kernels, span_bytes)
        name = "rand_write" if op is Op.WRITE else "rand_read"
        wl = workload or ("randwrite4k" if op is Op.WRITE else "randread4k")
        return [KernelDescriptor(wl, i, name, grid, block, exec_ns,
                                 (KernelIo(0, op, int(offs[i]), SECTOR),))
                for i in range(kernels)]
    return gen


def sequential(kernels: int, seed: int, io_bytes: int = 65536, op: str = "W", exec_ns: int = 5_000,
               grid: int = 512, block: int = 256, span_bytes: int = DEFAULT_SPAN) -> list[KernelDescriptor]:
    del seed  # fully determined by parameters
    per_span = max(1, span_bytes // io_bytes)
    return [KernelDescriptor("seq", i, "seq_io", grid, block, exec_ns,
                             (KernelIo(0, Op(op), (i % per_span) * io_bytes, io_bytes),))
            for i in range(kernels)]


def backprop(kernels: int, seed: int, streams: int = 4, span_bytes: int = DEFAULT_SPAN,
             region_bytes: int = 4 * 1024 * 1024) -> list[KernelDescriptor]:
    rng = np.random.default_rng(seed)
    execs = _exec(rng, kernels, 20_000, 0.05)
    out = []
    per = -(-kernels // streams)
    for i in range(kernels):
        s, j = divmod(i, per)
        base = (s * region_bytes) % max(region_bytes, span_bytes - region_bytes)
        name = "bpnn_layerforward" if j % 2 == 0 else "bpnn_adjust_weights"
        ios = [KernelIo(k * 2_000, Op.READ, base + ((j * 4 + k) * 16384) % region_bytes, 16384)
               for k in range(4)]
        if j % 2:
            ios.append(KernelIo(10_000, Op.WRITE, base + (j * 16384) % region_bytes, 16384))
        out.append(KernelDescriptor(f"backprop.{s}", j, name, 64, 256, int(execs[i]), tuple(ios)))
    return out


def hotspot(kernels: int, seed: int, streams: int = 2, burst: int = 32, burst_every: int = 8,
            span_bytes: int = DEFAULT_SPAN) -> list[KernelDescriptor]:
    rng = np.random.default_rng(seed)
    execs = _exec(rng, kernels, 50_000, 0.1)
    out = []
    per = -(-kernels // streams)
    for i in range(kernels):
        s, j = divmod(i, per)
        ios = ()
        if j % burst_every == 0:
            offs = _offsets(rng, burst, span_bytes)
            ios = tuple(KernelIo(0, Op.WRITE, int(o), SECTOR) for o in offs)
        out.append(KernelDescriptor(f"hotspot.{s}", j, "calculate_temp", 100, 256, int(execs[i]), ios))
    return out


def lavamd(kernels: int, seed: int, streams: int = 2, span_bytes: int = DEFAULT_SPAN) -> list[KernelDescriptor]:
    rng = np.random.default_rng(seed)
    execs = _exec(rng, kernels, 80_000, 0.15)
    out = []
    per = -(-kernels // streams)
    for i in range(kernels):
        s, j = divmod(i, per)
        ios = []
        for k in range(int(rng.integers(1, 5))):
            size = SECTOR * int(rng.integers(1, 17))
            op = Op.READ if rng.random() < 0.7 else Op.WRITE
            ios.append(KernelIo(int(rng.integers(0, 40_000)), op, int(_offsets(rng, 1, span_bytes, size)[0]), size))
        out.append(KernelDescriptor(f"lavamd.{s}", j, "kernel_gpu_cuda", 1000, 128, int(execs[i]), tuple(ios)))
    return out


def bimodal(kernels: int, seed: int, low_ns: int = 1_000, high_ns: int = 100_000, cv: float = 0.02,
            high_fraction: float = 0.5) -> list[KernelDescriptor]:
    rng = np.random.default_rng(seed)
    high = rng.random(kernels) < high_fraction
    execs = np.where(high, _exec(rng, kernels, high_ns, cv), _exec(rng, kernels, low_ns, cv))
    return [KernelDescriptor("bimodal", i, "mixed_kernel", 256, 256, int(execs[i])) for i in range(kernels)]


def group_params(groups: int, seed: int, cv: float, mean_lo: float = 1e4, mean_hi: float = 1e6):
    """Per-group (mean, std) used by :func:`grouped`."""
    rng = np.random.default_rng([seed, 0xC0FFEE])
    means = np.exp(rng.uniform(np.log(mean_lo), np.log(mean_hi), size=groups))
    return [(float(m), float(m * cv)) for m in means]


def grouped(kernels: int, seed: int, groups: int = 20, cv: float = 0.1) -> list[KernelDescriptor]:
    params = group_params(groups, seed, cv)
    rng = np.random.default_rng(seed)
    gid = rng.integers(0, groups, size=kernels)
    out = []
    for i in range(kernels):
        mean, std = params[gid[i]]
        t = max(1, int(round(rng.normal(mean, std))))
        out.append(KernelDescriptor("grouped", i, f"kernel_{gid[i]:02d}", 128, 256, t))
    return out


GENERATORS: dict[str, Callable[..., list[KernelDescriptor]]] = {
    "rand-write-4k": _random_4k(Op.WRITE),
    "rand-read-4k": _random_4k(Op.READ),
    "seq": sequential,
    "backprop": backprop,
    "hotspot": hotspot,
    "lavamd": lavamd,
    "bimodal": bimodal,
    "grouped": grouped,
}


def generate(kind: str, kernels: int, seed: int, **params) -> list[KernelDescriptor]:
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise UnknownGenerator(f"unknown generator {kind!r}; choose from {', '.join(GENERATORS)}") from None
    if kernels < 0:
        raise ValueError("kernel count must be >= 0")
    return gen(kernels, seed, **params)
