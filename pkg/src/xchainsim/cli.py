"""``xchainsim run`` / ``xchainsim compare``."""

from __future__ import annotations

import argparse
import sys

from . import bench
from .scenario import ConfigError, load_raw, parse


def _onoff(text: str) -> bool:
    v = text.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on|off, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xchainsim", description="Cross-chain invocation simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a builtin scenario or a YAML scenario file")
    run.add_argument("scenario", help=f"one of {', '.join(bench.BUILTINS)} or a path")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default=None, help="directory for CSV output")
    run.add_argument("--protocol", choices=("integratex", "baseline"))
    run.add_argument("--ta", type=_onoff)
    run.add_argument("--fgsl", type=_onoff)
    run.add_argument("--block-time", type=int, nargs="+", dest="block_times", metavar="MS")
    run.add_argument("--depth", type=int)
    run.add_argument("--concurrency", type=int)
    run.add_argument("--schedules", type=int, default=1000,
                     help="schedules for the fault-suite scenario")
    cmp_ = sub.add_parser("compare", help="diff two CSV files with the same columns")
    cmp_.add_argument("csv_a")
    cmp_.add_argument("csv_b")
    cmp_.add_argument("--expect", action="append", default=[], metavar="METRIC:DIRECTION",
                      help=f"trend to enforce; DIRECTION is one of {', '.join(bench.TRENDS)}")
    return ap


def _cmd_run(args) -> int:
    overrides = dict(protocol=args.protocol, ta=args.ta, fgsl=args.fgsl,
                     block_times=args.block_times, depth=args.depth,
                     concurrency=args.concurrency, seed=args.seed)
    if args.scenario in bench.SPECIAL:
        result = bench.run_scenario(args.scenario, seed=args.seed, out_dir=args.out,
                                    schedules=args.schedules)
    else:
        if args.scenario in bench.BUILTINS:
            raw, lines = dict(bench.BUILTINS[args.scenario]), None
        else:
            raw, lines = load_raw(args.scenario)
        raw = bench.apply_overrides(raw, **overrides)
        result = bench.run_scenario(parse(raw, lines), out_dir=args.out)
    for row in result.tables["summary"]:
        print(f"{row['run']}: committed={row['committed']}/{row['requests']} "
              f"latency={row['mean_latency_ms']}ms gas={row['total_gas']} audit={row['audit_ok']}")
    for row in result.tables["lsd"]:
        print(f"{row['contract']}: monolithic={row['monolithic_gas']} lsd={row['lsd_gas']} "
              f"saving={row['saving_pct']}%")
    for text, ok, detail in result.assertions:
        print(f"[{'PASS' if ok else 'FAIL'}] {text}  {detail}")
    return 0 if result.ok else 1


def _cmd_compare(args) -> int:
    deltas = bench.compare(args.csv_a, args.csv_b)
    if deltas:
        print(bench.format_deltas(deltas))
    status = 0
    for spec in args.expect:
        metric, _, direction = spec.rpartition(":")
        if direction not in bench.TRENDS or not metric:
            print(f"bad --expect {spec!r}", file=sys.stderr)
            return 2
        for line in bench.check_trend(args.csv_a, args.csv_b, metric, direction):
            print(f"[FAIL] expected {direction}: {line}")
            status = 1
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_compare(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except bench.SchemaMismatch as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
