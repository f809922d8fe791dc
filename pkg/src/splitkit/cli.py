"""Command-line entry point: ``splitkit run|order|list-problems``."""

from __future__ import annotations

import argparse
import sys

from .delay import GridAlignmentError
from .experiments import ConfigError, fit_and_report, load_config, run_config
from .problems import PROBLEMS


def _cmd_run(args):
    cfg = load_config(args.config)
    code, verdicts = run_config(cfg, out_dir=args.out, jobs=args.jobs, dump_history=args.dump_history)
    for v in verdicts:
        print(v.line())
    print("OVERALL " + ("PASS" if code == 0 else "FAIL"))
    return code


def _cmd_order(args):
    rows = fit_and_report(args.errors_csv)
    print("scheme,order,residual,status")
    for row in rows:
        print(",".join(row))
    return 0


def _cmd_list(args):
    width = max(len(name) for name in PROBLEMS)
    for name, (desc, _) in PROBLEMS.items():
        print(f"{name:<{width}}  {desc}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="splitkit", description="Operator-splitting convergence studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a study from a JSON config")
    run.add_argument("config")
    run.add_argument("--jobs", type=int, default=1, help="worker threads for independent cells")
    run.add_argument("--out", default=None, help="output directory (overrides the config)")
    run.add_argument("--dump-history", action="store_true", help="delay studies: write trajectory and history CSVs")
    run.set_defaults(func=_cmd_run)

    order = sub.add_parser("order", help="fit convergence orders from an errors.csv")
    order.add_argument("errors_csv")
    order.set_defaults(func=_cmd_order)

    lst = sub.add_parser("list-problems", help="list bundled problems")
    lst.set_defaults(func=_cmd_list)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("splitkit: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except GridAlignmentError as exc:
        hint = f" (try q = {exc.suggested_q})" if exc.suggested_q else ""
        print(f"splitkit: {exc}{hint}", file=sys.stderr)
        return 1
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"splitkit: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"splitkit: aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
