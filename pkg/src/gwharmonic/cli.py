"""Command-line experiment runner.

    gwharmonic <experiment> [--config FILE] [--seed N] [--out DIR]
                            [--threads K] [--param key=value ...]

Writes raw.csv and summary.json to the output directory and exits 0 iff all
enabled acceptance checks pass.  ``gwharmonic show-config <experiment>``
prints the flat key=value schema with defaults.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (
    EXPERIMENTS,
    build_config,
    config_help,
    parse_config_file,
    run_experiment,
    write_report,
)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gwharmonic", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--threads", type=int, help="worker processes (overrides config)")
        sp.add_argument(
            "--param",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config key; repeatable",
        )
    sc = sub.add_parser("show-config", help="print config keys, defaults and help")
    sc.add_argument("experiment", choices=sorted(EXPERIMENTS))
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "show-config":
        print(config_help(args.experiment))
        return 0

    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    for item in args.param:
        if "=" not in item:
            raise SystemExit(f"--param expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    if args.out is not None:
        overrides["out"] = args.out

    cfg = build_config(args.command, file_values, overrides)
    report = run_experiment(args.command, cfg)

    for chk in report.checks:
        status = "PASS" if chk["passed"] else "FAIL"
        print(f"[{status}] {args.command}.{chk['name']}: {chk['detail']}")
    if cfg.get("out"):
        raw_path, summary_path = write_report(report, cfg["out"])
        print(f"wrote {raw_path}")
        print(f"wrote {summary_path}")
    return 0 if report.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
