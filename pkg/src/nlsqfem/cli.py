"""Command line entry point: ``nlsqfem run | table | verify``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import lab, oracle
from .errors import ConfigurationError, NonConvergenceError, SolverFailure

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_NONCONVERGENCE = 2
EXIT_CONFIG = 3


def _run(args):
    cfg = lab.ExperimentConfig.from_file(args.config)
    if args.csv:
        cfg.output_csv = args.csv
    if args.vtk:
        cfg.output_vtk = args.vtk
    result = lab.run_experiment(cfg)
    if cfg.output_csv:
        print(lab.markdown_table(lab.read_csv(cfg.output_csv)), end="")
    else:
        for row in result.rows:
            print(row)
    return EXIT_OK


def _table(args):
    rows = lab.read_csv(args.csv)
    if args.format == "md":
        print(lab.markdown_table(rows), end="")
    else:
        with open(args.csv) as fh:
            print(fh.read(), end="")
    return EXIT_OK


def _verify(args):
    results = oracle.run_all()
    for r in results:
        print(r.line())
    return EXIT_OK if oracle.all_passed(results) else EXIT_FAILURE


def build_parser():
    p = argparse.ArgumentParser(prog="nlsqfem", description="Nonlinear least-squares finite element experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log Newton and refinement progress")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config (key = value file)")
    r.add_argument("config")
    r.add_argument("--csv", help="override the output CSV path")
    r.add_argument("--vtk", help="override the output VTK path")
    r.set_defaults(func=_run)
    t = sub.add_parser("table", help="pretty-print a result CSV")
    t.add_argument("csv")
    t.add_argument("--format", choices=("md", "csv"), default="md")
    t.set_defaults(func=_table)
    v = sub.add_parser("verify", help="run the oracle self-checks")
    v.set_defaults(func=_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except SolverFailure as exc:
        print(f"solver failure: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
