"""Flat ``key=value`` run configuration.

One pair per line, ``#`` starts a comment. Unknown keys and bad values raise
:class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Iterable, Mapping as TMapping, Optional

from .errors import ConfigError
from .flash import FlashGeometry, FlashTiming
from .ftl import Allocation, GcConfig, Mapping, Scheme
from .gpu import Policy, SchedulerConfig


@dataclass(frozen=True)
class RunConfig:
    channels: int = 8
    ways_per_channel: int = 4
    dies_per_way: int = 2
    planes_per_die: int = 2
    blocks_per_plane: int = 64
    pages_per_block: int = 64
    page_bytes: int = 16384
    sector_bytes: int = 4096
    read_ns: int = 50_000
    program_ns: int = 660_000
    erase_ns: int = 3_500_000
    bus_bytes_per_ns: float = 0.4
    cmd_overhead_ns: int = 200
    mapping: Mapping = Mapping.FINE
    allocation: Allocation = Allocation.DYNAMIC
    scheme: Scheme = Scheme.CWDP
    gc_free_threshold: float = 0.05
    queue_depth: int = 256
    queue_count: int = 0  # 0: one queue pair per workload
    policy: Policy = Policy.ROUND_ROBIN
    block_stride: int = 2
    core_count: int = 64
    chunk_len: int = 32
    seed: Optional[int] = None

    def geometry(self) -> FlashGeometry:
        return FlashGeometry(self.channels, self.ways_per_channel, self.dies_per_way,
                             self.planes_per_die, self.blocks_per_plane, self.pages_per_block,
                             self.page_bytes, self.sector_bytes)

    def timing(self) -> FlashTiming:
        return FlashTiming(self.read_ns, self.program_ns, self.erase_ns,
                           self.bus_bytes_per_ns, self.cmd_overhead_ns)

    def gc(self) -> GcConfig:
        return GcConfig(self.gc_free_threshold)

    def scheduler(self) -> SchedulerConfig:
        return SchedulerConfig(self.policy, self.block_stride, self.core_count, self.chunk_len)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "RunConfig":
        """Build every derived object once so bad combinations surface as ConfigError."""
        for key, build in (("geometry", self.geometry), ("timing", self.timing),
                           ("gc_free_threshold", self.gc), ("scheduler", self.scheduler)):
            try:
                build()
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        for key in ("queue_depth",):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if self.queue_count < 0:
            raise ConfigError("queue_count", "must be >= 0")
        return self


KEYS = tuple(f.name for f in fields(RunConfig))
_ENUMS = {"mapping": Mapping, "allocation": Allocation, "scheme": Scheme, "policy": Policy}


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key in _ENUMS:
        try:
            return _ENUMS[key](raw.lower())
        except ValueError:
            choices = "|".join(m.value for m in _ENUMS[key])
            raise ConfigError(key, f"expected one of {choices}, got {raw!r}") from None
    typ = float if key in ("bus_bytes_per_ns", "gc_free_threshold") else int
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(key, f"expected {typ.__name__}, got {raw!r}") from None


def parse_pairs(lines: Iterable[str]) -> dict:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(key, f"line {n}: expected key=value")
        if key not in KEYS:
            raise ConfigError(key, f"unknown configuration key {key!r}")
        out[key] = _convert(key, value)
    return out


def load_config(path: Optional[str] = None, overrides: TMapping[str, str] | Iterable[str] = ()) -> RunConfig:
    """Read ``path`` (optional) and apply ``overrides`` (``key=value`` strings or a mapping)."""
    values = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError("config", f"file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            values.update(parse_pairs(fh))
    if isinstance(overrides, TMapping):
        overrides = [f"{k}={v}" for k, v in overrides.items()]
    values.update(parse_pairs(overrides))
    return RunConfig(**values).validate()


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key in KEYS:
        v = getattr(cfg, key)
        if v is None:
            continue
        lines.append(f"{key}={v.value if key in _ENUMS else v}")
    return "\n".join(lines) + "\n"
