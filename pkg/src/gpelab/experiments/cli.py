"""Command line entry point: ``gpelab <command> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import runner
from .config import ExperimentConfig, load_config, paper_scale


def _levels(text: str) -> list[int]:
    if "-" in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpelab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    commands = {
        "groundstate": "compute and store the initial ground state",
        "reference": "compute and store the fine-mesh reference solution",
        "run": "one method at one level, errors against the reference",
        "study": "convergence study over methods and levels",
        "localization-study": "basis gap as a function of oversampling layers",
        "time-order": "temporal convergence on a fixed spatial mesh",
        "ritz-study": "Ritz projection error of the stationary problem",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML experiment file (defaults used when omitted)")
        p.add_argument("--out", help="output directory (must exist)")
        p.add_argument("--paper-scale", action="store_true", help="fine level 16 and coarse levels 7..12")
        p.add_argument("--threads", type=int, default=1)
        if name in ("study", "ritz-study"):
            p.add_argument("--levels", type=_levels, help="e.g. 4-8 or 4,6,8")
        if name == "study":
            p.add_argument("--methods", type=lambda s: s.split(","))
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.paper_scale:
            cfg = paper_scale(cfg)
        out = args.out
        if args.command == "groundstate":
            print(runner.cmd_groundstate(cfg, out))
        elif args.command == "reference":
            print(runner.cmd_reference(cfg, out))
        elif args.command == "run":
            row = runner.cmd_run(cfg, out, args.threads)
            print(", ".join(f"{c}={row.get(c)}" for c in runner.REPORT_COLUMNS))
        elif args.command == "study":
            rows = runner.cmd_study(cfg, out, args.levels, args.methods, args.threads)
            _table(rows, runner.REPORT_COLUMNS)
        elif args.command == "localization-study":
            _table(runner.cmd_localization_study(cfg, out), ("ell", "basis_gap", "ratio", "h1_error"))
        elif args.command == "time-order":
            _table(runner.cmd_time_order(cfg, out), ("tau", "h1_error", "eoc"))
        elif args.command == "ritz-study":
            _table(runner.cmd_ritz_study(cfg, out, args.levels), ("i", "H", "ell", "h1_error", "eoc"))
    except (FileNotFoundError, ValueError) as exc:
        print(f"gpelab: error: {exc}", file=sys.stderr)
        return 2
    return 0


def _table(rows, columns) -> None:
    print("  ".join(columns))
    for r in rows:
        print("  ".join(runner._fmt(r.get(c)) or "-" for c in columns))


if __name__ == "__main__":
    sys.exit(main())
