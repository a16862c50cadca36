"""Command-line entry point ``v2g-mpc``.

Exit codes: 0 success, 2 configuration error, 3 simulation error, 4 I/O error.
Set ``V2G_MPC_VERBOSE=1`` for progress logging and a per-update controller
log (``mpc_log.csv``), ``2`` for debug output.
"""

import argparse
import json
import logging
import os
import sys

from .power_quality import DEFAULT_N_MAX
from .runner import STEADY_STATE_FRACTION, RunError, analyze_csv, run
from .scenario import ScenarioError, parse_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_IO = 4
VERBOSE_ENV = "V2G_MPC_VERBOSE"


def _verbosity():
    try:
        return int(os.environ.get(VERBOSE_ENV, "0"))
    except ValueError:
        return 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="v2g-mpc",
        description="Simulate the bidirectional charger with and without MPC and compare THD.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "simulate without and with MPC and write the comparison"),
                       ("compare", "alias of run")):
        p = sub.add_parser(name, help=text)
        p.add_argument("scenario", help="scenario file (JSON)")
        p.add_argument("-o", "--out-dir", required=True, help="output directory")
        p.add_argument("--n-max", type=int, default=DEFAULT_N_MAX,
                       help="highest harmonic in the THD sum (default: %(default)s)")
    p = sub.add_parser("analyze", help="THD of a time-series CSV written by run")
    p.add_argument("csv", help="time-series CSV")
    p.add_argument("--f0", type=float, default=50.0, help="fundamental hint in Hz (default: %(default)s)")
    p.add_argument("--n-max", type=int, default=DEFAULT_N_MAX,
                   help="highest harmonic in the THD sum (default: %(default)s)")
    p.add_argument("--window", type=float, default=STEADY_STATE_FRACTION,
                   help="analyzed final fraction of the record (default: %(default)s)")
    return parser


def _error(message, code):
    print(f"v2g-mpc: error: {message}", file=sys.stderr)
    return code


def _cmd_run(args, verbose):
    try:
        sc = parse_scenario(args.scenario)
    except ScenarioError as exc:
        return _error(f"{args.scenario}: {exc}", EXIT_CONFIG)
    except OSError as exc:
        return _error(str(exc), EXIT_IO)
    if args.n_max < 1:
        return _error("--n-max must be >= 1", EXIT_CONFIG)
    try:
        report = run(sc, args.out_dir, n_max=args.n_max, log_mpc=verbose >= 1)
    except RunError as exc:
        return _error(str(exc), exc.exit_code)
    for row in report.rows:
        cells = ["n/a" if v is None else f"{v:.4f}" for v in
                 (row.thd_without_mpc, row.thd_with_mpc, row.improvement_percent)]
        print(f"{row.signal_name:<26} without={cells[0]:>10}%  with={cells[1]:>10}%  improvement={cells[2]:>9}%")
    for name, path in sorted(report.output_paths.items()):
        print(f"wrote {name}: {path}")
    return EXIT_OK


def _cmd_analyze(args):
    if not 0 < args.window <= 1:
        return _error("--window must lie in (0, 1]", EXIT_CONFIG)
    try:
        result = analyze_csv(args.csv, f0=args.f0, n_max=args.n_max, window_fraction=args.window)
    except OSError as exc:
        return _error(str(exc), EXIT_IO)
    except ValueError as exc:
        return _error(str(exc), EXIT_CONFIG)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    verbose = _verbosity()
    logging.basicConfig(
        level=logging.DEBUG if verbose >= 2 else logging.INFO if verbose >= 1 else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command in ("run", "compare"):
        return _cmd_run(args, verbose)
    return _cmd_analyze(args)


if __name__ == "__main__":
    sys.exit(main())
