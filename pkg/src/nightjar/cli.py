"""``nightjar run|compare|sweep --config <path> --out <dir>``.

Exit codes: 0 success, 2 configuration error, 3 a run hit the overload cap.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .report import cmd_compare, cmd_run, cmd_sweep, format_table

EXIT_OK, EXIT_CONFIG, EXIT_OVERLOAD = 0, 2, 3


def _seed_range(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError
            return list(range(lo_i, hi_i + 1))
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N..M or a comma list, got {text!r}") from None


def _qps_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated rates, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nightjar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run one policy"), ("compare", "compare policies on one stream"),
                        ("sweep", "compare policies across request rates")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        seeds = p.add_mutually_exclusive_group()
        seeds.add_argument("--seed", type=int, help="single replica seed")
        seeds.add_argument("--seeds", type=_seed_range, help="replica seeds, N..M inclusive")
        if name == "sweep":
            p.add_argument("--qps", type=_qps_list, help="rates to sweep; overrides sweep.qps")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        seeds = [args.seed] if args.seed is not None else (args.seeds or cfg.seeds)
        base = args.config.resolve().parent
        if args.command == "run":
            summary = cmd_run(cfg, args.out, seeds, base)
            print(format_table(summary["replicas"], ["seed", "throughput", "mean_e2e_latency",
                                                     "p95_latency", "steps", "completed_requests", "status"]))
            overloaded = summary["status"] != "ok"
        elif args.command == "compare":
            rows = cmd_compare(cfg, args.out, seeds, base)
            print(format_table(rows, ["policy", "throughput_tps", "throughput_delta_pct", "mean_e2e_s",
                                      "mean_e2e_delta_pct", "status"]))
            overloaded = any(r["status"] != "ok" for r in rows)
        else:
            qps = args.qps or (cfg.sweep.qps if cfg.sweep else None)
            if not qps:
                raise ConfigError("sweep.qps: no rates given (config sweep.qps or --qps)")
            _, rows = cmd_sweep(cfg, args.out, seeds, qps, base)
            print(format_table(rows, ["qps", "policy", "throughput_tps", "throughput_delta_pct",
                                      "mean_e2e_s", "status"]))
            overloaded = any(r["status"] != "ok" for r in rows)
    except ValueError as exc:  # ConfigError included
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if overloaded:
        print("overload: at least one run exceeded sim.max_queue", file=sys.stderr)
        return EXIT_OVERLOAD
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
