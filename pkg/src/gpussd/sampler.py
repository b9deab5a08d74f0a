"""Statistical trace compaction.

Kernels are grouped by (name, grid, block), heterogeneous groups are split by
1-D 2-means on execution time, and each group keeps only as many random
samples as needed to bound the relative error of its mean at 95 % confidence.
The total execution time is then estimated as sum(N_i * sample_mean_i).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .errors import DegenerateSplit, IoFailure, ZeroMeanPositiveVariance
from .gpu import KernelDescriptor, dumps_record, kernel_record

Z95 = 1.96


@dataclass(frozen=True)
class SamplerConfig:
    epsilon: float = 0.05
    cv_split_threshold: float = 0.2
    min_split_size: int = 4
    seed: int = 0
    z: float = Z95

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if self.cv_split_threshold <= 0:
            raise ValueError("cv_split_threshold must be > 0")
        if self.min_split_size < 2:
            raise ValueError("min_split_size must be >= 2")


@dataclass(eq=False)
class KernelGroup:
    key: tuple
    members: np.ndarray        # positions in the input kernel sequence
    exec_ns: np.ndarray        # execution times aligned with members
    sampled: Optional[np.ndarray] = None
    sample_mean_ns: Optional[float] = None
    sample_var_ns2: float = 0.0

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def mean_ns(self) -> float:
        return float(self.exec_ns.mean())

    @property
    def var_ns2(self) -> float:
        return float(self.exec_ns.var())

    @property
    def cv(self) -> float:
        mu = self.mean_ns
        if mu == 0:
            return 0.0 if self.var_ns2 == 0 else math.inf
        return math.sqrt(self.var_ns2) / mu

    @property
    def m(self) -> int:
        return 0 if self.sampled is None else len(self.sampled)

    def subset(self, mask: np.ndarray) -> "KernelGroup":
        return KernelGroup(self.key, self.members[mask], self.exec_ns[mask])


def groups_from_arrays(keys: Sequence, exec_ns: Sequence[int]) -> list[KernelGroup]:
    """Partition positions by key, groups in first-appearance order."""
    exec_arr = np.asarray(exec_ns, dtype=np.float64)
    index: dict = {}
    for pos, key in enumerate(keys):
        index.setdefault(key, []).append(pos)
    out = []
    for key, pos in index.items():
        members = np.asarray(pos, dtype=np.int64)
        out.append(KernelGroup(key, members, exec_arr[members]))
    return out


def group_kernels(kernels: Sequence[KernelDescriptor]) -> list[KernelGroup]:
    keys = [(k.name, k.grid_blocks, k.block_threads) for k in kernels]
    return groups_from_arrays(keys, [k.exec_ns for k in kernels])


def two_means(values: np.ndarray) -> np.ndarray:
    """Boolean mask of the upper cluster of a 1-D 2-means run.

    Centroids start at min and max; assignment/update repeats until stable.
    Ties go to the lower cluster.
    """
    lo, hi = float(values.min()), float(values.max())
    upper = values > (lo + hi) / 2
    while True:
        if upper.all() or not upper.any():
            raise DegenerateSplit("2-means produced an empty cluster")
        lo, hi = float(values[~upper].mean()), float(values[upper].mean())
        nxt = values > (lo + hi) / 2
        if np.array_equal(nxt, upper):
            return upper
        upper = nxt


def split_group(group: KernelGroup, cfg: SamplerConfig = SamplerConfig()) -> list[KernelGroup]:
    if group.size < cfg.min_split_size or group.cv <= cfg.cv_split_threshold:
        return [group]
    try:
        upper = two_means(group.exec_ns)
    except DegenerateSplit:
        return [group]
    return split_group(group.subset(~upper), cfg) + split_group(group.subset(upper), cfg)


def min_samples(group: KernelGroup, cfg: SamplerConfig = SamplerConfig()) -> int:
    return required_samples(group.mean_ns, math.sqrt(group.var_ns2), group.size, cfg.epsilon, cfg.z)


def required_samples(mean: float, std: float, n: int, epsilon: float, z: float = Z95) -> int:
    """ceil((z*std / (epsilon*mean))^2) clamped to [1, n]."""
    if std == 0:
        return 1
    if mean == 0:
        raise ZeroMeanPositiveVariance("relative error is undefined for a zero mean")
    m = math.ceil((z * std / (epsilon * mean)) ** 2)
    return max(1, min(m, n))


def sample_group(group: KernelGroup, m: int, seed: int, stream: int = 0) -> KernelGroup:
    """Draw ``m`` members uniformly without replacement; fills sampled fields in place."""
    if not 1 <= m <= group.size:
        raise ValueError(f"sample size {m} outside 1..{group.size}")
    if m == group.size:
        picks = np.arange(group.size)
    else:
        rng = np.random.default_rng([seed, stream])
        picks = np.sort(rng.choice(group.size, size=m, replace=False))
    vals = group.exec_ns[picks]
    group.sampled = group.members[picks]
    group.sample_mean_ns = float(vals.mean())
    if m == group.size:
        group.sample_var_ns2 = 0.0
    elif m > 1:
        group.sample_var_ns2 = float(vals.var(ddof=1))
    else:
        # one sample gives no variance estimate; use the known group variance
        group.sample_var_ns2 = group.var_ns2
    return group


def predict_total(groups: Iterable[KernelGroup], z: float = Z95) -> tuple[float, float]:
    y = 0.0
    var = 0.0
    for g in groups:
        if g.sample_mean_ns is None:
            raise ValueError(f"group {g.key} has not been sampled")
        y += g.size * g.sample_mean_ns
        var += g.size ** 2 * g.sample_var_ns2 / g.m
    return y, z * math.sqrt(var)


@dataclass
class Compaction:
    groups: list[KernelGroup]
    total_kernels: int
    predicted_ns: float
    half_width_ns: float
    true_total_ns: float

    @property
    def kept(self) -> int:
        return sum(g.m for g in self.groups)

    @property
    def ratio(self) -> float:
        return self.total_kernels / self.kept if self.kept else math.inf


def compact_groups(groups: list[KernelGroup], cfg: SamplerConfig = SamplerConfig()) -> Compaction:
    """Split, size and sample already-formed groups."""
    final = [s for g in groups for s in split_group(g, cfg)]
    for i, g in enumerate(final):
        sample_group(g, min_samples(g, cfg), cfg.seed, i)
    y, hw = predict_total(final, cfg.z)
    total = sum(g.size for g in final)
    truth = float(sum(g.exec_ns.sum() for g in final))
    return Compaction(final, total, y, hw, truth)


def compact(kernels: Sequence[KernelDescriptor], cfg: SamplerConfig = SamplerConfig()) -> Compaction:
    return compact_groups(group_kernels(kernels), cfg)


def _weight(n: int, m: int):
    w = n / m
    return int(w) if w.is_integer() else round(w, 6)


def emit_sampled_trace(groups: Sequence[KernelGroup], kernels: Sequence[KernelDescriptor],
                       sink: TextIO) -> int:
    """Write sampled kernels in input order, each run of one group led by a header line.

    Returns the number of kernel records written.
    """
    owner = {}
    for gi, g in enumerate(groups):
        for pos in g.sampled:
            owner[int(pos)] = gi
    written = 0
    current = None
    try:
        for pos in sorted(owner):
            gi = owner[pos]
            if gi != current:
                g = groups[gi]
                name, grid, block = g.key
                header = {"group": gi, "name": name, "grid": grid, "block": block,
                          "N": g.size, "m": g.m, "weight": _weight(g.size, g.m)}
                sink.write(dumps_record(header) + "\n")
                current = gi
            sink.write(dumps_record(kernel_record(kernels[pos])) + "\n")
            written += 1
    except OSError as exc:
        raise IoFailure(f"cannot write compacted trace: {exc}") from exc
    return written
