"""Command-line entry point.

Modes: a plain run (default), --verify H1,H2,... to re-run the same
network under several process counts and byte-compare the rastergrams,
and --sweep strong|weak for scaling measurements.

Exit codes: 0 success, 1 runtime failure (including a verify
divergence), 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import RunConfig, load_config
from .runner import run, sweep, verify
from .topology import ConfigError


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        cx, cy = text.lower().split("x")
        return int(cx), int(cy)
    except ValueError:
        raise ConfigError(f"--grid expects CxR (e.g. 2x2), got {text!r}") from None


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spikebench",
        description="Distributed plastic spiking network benchmark")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--grid", help="columns grid as CxR, e.g. 2x2")
    p.add_argument("--procs", type=int, help="number of simulation processes")
    p.add_argument("--backend", choices=("inproc", "tcp"))
    p.add_argument("--roster", help="tcp roster file: one 'rank host:port' per line")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--warmup", type=float, help="warmup simulated seconds")
    p.add_argument("--measure", type=float, help="measured simulated seconds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--verify", metavar="H1,H2,...",
                   help="run each process count and compare rastergrams")
    p.add_argument("--sweep", choices=("strong", "weak"),
                   help="scaling sweep over --points contexts")
    p.add_argument("--points", default="1,2,4", metavar="H1,H2,...",
                   help="context counts for --sweep (default 1,2,4)")
    p.add_argument("--no-barrier", action="store_true",
                   help="disable the per-step synchronization barrier")
    p.add_argument("--trace", metavar="GID,...",
                   help="record membrane potential traces for these neurons")
    return p


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    overrides = {}
    if args.grid:
        overrides["cfx"], overrides["cfy"] = _parse_grid(args.grid)
    if args.procs is not None:
        overrides["processes"] = args.procs
    if args.backend:
        overrides["backend"] = args.backend
    if args.roster:
        overrides["roster"] = args.roster
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.warmup is not None:
        overrides["warmup_seconds"] = args.warmup
    if args.measure is not None:
        overrides["measure_seconds"] = args.measure
    if args.out:
        overrides["out_dir"] = args.out
    if args.no_barrier:
        overrides["barrier_enabled"] = False
    if args.trace:
        overrides["trace_gids"] = tuple(_parse_int_list(args.trace))
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        cfg.validate()
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.verify:
            counts = _parse_int_list(args.verify)
            report = verify(cfg, counts)
            print(report)
            return 0 if report.passed else 1
        if args.sweep:
            rows = sweep(cfg, args.sweep, _parse_int_list(args.points))
            for row in rows:
                status = "ok" if row.metrics else f"failed: {row.error}"
                print(f"{row.label}: grid={row.grid_label} "
                      f"contexts={row.contexts} {status}")
            print(f"scaling table written to {cfg.out_dir}/scaling.csv")
            return 0
        result = run(cfg)
        print(result.metrics.summary_row(cfg.grid_label(), cfg.processes))
        print(f"outputs written to {result.out_dir}")
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report and signal exit 1
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
