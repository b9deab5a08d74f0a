"""Command-line entry point: ``gpussd run|sweep|synth|sample``."""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from .config import RunConfig, load_config
from .errors import ConfigError, IoFailure, SimError
from .ftl import Scheme
from .gpu import Policy, load_kernels, write_trace
from .metrics import render
from .sampler import SamplerConfig, compact, emit_sampled_trace
from .sim import run_traces, render_sweep, sweep
from .synth import GENERATORS, generate


def _common(p: argparse.ArgumentParser, trace_required: bool = True) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--trace", action="append", default=[], required=trace_required,
                   help="trace file (repeat for concurrent workloads)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--precondition", action="store_true",
                   help="write every extent the trace reads before the run starts")


def _config(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    for path in args.trace:
        if not os.path.isfile(path):
            raise ConfigError("trace", f"file not found: {path}")
    return cfg


def _enum_list(kind, text: str, key: str):
    out = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        try:
            out.append(kind(item.lower()))
        except ValueError:
            raise ConfigError(key, f"unknown value {item!r}") from None
    if not out:
        raise ConfigError(key, "needs at least one value")
    return out


def cmd_run(args) -> int:
    cfg = _config(args)
    report = run_traces(cfg, args.trace, args.precondition)
    formats = args.format.split(",")
    for path in render([report], args.out, formats):
        print(path)
    print(f"iops={report.iops:.3f} resp_mean_ns={report.resp_mean_ns:.1f} "
          f"sim_end_ns={report.sim_end_ns} completed={report.completed}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    policies = _enum_list(Policy, args.policies, "policy")
    schemes = _enum_list(Scheme, args.schemes, "scheme")
    reports = sweep(cfg, args.trace, policies, schemes, args.precondition, args.jobs)
    for path in render_sweep(reports, args.out):
        print(path)
    return 0


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(key, "expected key=value")
    for conv in (int, float):
        try:
            return key, conv(value)
        except ValueError:
            pass
    return key, value


def cmd_synth(args) -> int:
    if args.seed is None:
        raise ConfigError("seed", "synthetic generation needs --seed")
    params = dict(_param(p) for p in args.param)
    try:
        kernels = generate(args.kind, args.kernels, args.seed, **params)
    except TypeError as exc:
        raise ConfigError("param", str(exc)) from None
    try:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            n = write_trace(kernels, fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {args.out}: {exc}") from exc
    print(f"{n} kernels -> {args.out}")
    return 0


def cmd_sample(args) -> int:
    if args.seed is None:
        raise ConfigError("seed", "sampling needs --seed")
    try:
        cfg = SamplerConfig(args.epsilon, args.cv_threshold, args.min_split, args.seed)
    except ValueError as exc:
        raise ConfigError("epsilon", str(exc)) from None
    kernels = load_kernels(args.trace)
    result = compact(kernels, cfg)
    try:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            kept = emit_sampled_trace(result.groups, kernels, fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {args.out}: {exc}") from exc
    ratio = len(kernels) / kept if kept else float("inf")
    print(f"groups={len(result.groups)} kernels={len(kernels)} kept={kept}")
    print(f"predicted_total_ns={result.predicted_ns:.1f} half_width_ns={result.half_width_ns:.1f}")
    print(f"compression_ratio={ratio:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpussd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration")
    _common(p)
    p.add_argument("--format", default="csv,chart", help="comma list of csv, chart")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="simulate every policy x scheme combination")
    _common(p)
    p.add_argument("--policies", default="rr,large_chunk")
    p.add_argument("--schemes", default="cwdp,cdwp,wcdp")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic trace")
    p.add_argument("kind", help="one of: " + ", ".join(GENERATORS))
    p.add_argument("--kernels", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="trace file to write")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="compact a trace by statistical sampling")
    p.add_argument("--trace", required=True)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--cv-threshold", type=float, default=0.2)
    p.add_argument("--min-split", type=int, default=4)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="compacted trace to write")
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
