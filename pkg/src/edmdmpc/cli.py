"""Command line entry point: ``edmdmpc simulate|fit|mpc|compare``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import BACKEND, __version__
from .edmd import save_model
from .errors import EdmdMpcError, NumericalError
from .harness import (compare, export, load_scenario, load_scenario_file, read_trace,
                      run_scenario, simulate_scenario)
from .mpc import initial_model

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageExit


def _scenario(args):
    return load_scenario_file(args.scenario) if args.scenario else load_scenario()


def _write_trace(trace, out, stem, fmt, timings):
    out = Path(out)
    paths = []
    for f in (("csv", "json") if fmt == "both" else (fmt,)):
        path = out / f"{stem}.{f}"
        export(trace, path, f, timings=timings)
        paths.append(path)
    return paths


def cmd_simulate(args):
    sc = _scenario(args)
    if args.fixed_dose is not None:
        doc = dict(sc.document, fixed_dose=args.fixed_dose)
        sc = load_scenario(doc)
    trace = simulate_scenario(sc)
    for path in _write_trace(trace, args.out, "open_loop", args.format, True):
        print(f"wrote {path}")
    print(f"output: start {trace.output[0]:.6g}, end {trace.output[-1]:.6g}, "
          f"max {trace.output.max():.6g}")


def cmd_fit(args):
    sc = _scenario(args).with_mode(args.mode, args.seed)
    model = initial_model(sc.params, sc.template, sc.config)
    save_model(model, args.out)
    print(f"mode {model.mode}, N_phi {model.n_phi}, snapshots {model.snapshots.m}, "
          f"rank {model.rank}")
    print(f"dynamics residual {model.residual_dyn:.6e}")
    print(f"reconstruction residual {model.residual_rec:.6e}")
    print(f"wrote {args.out}")


def cmd_mpc(args):
    sc = _scenario(args)
    trace = run_scenario(sc, args.mode, args.seed)
    stem = f"trace_{trace.mode}"
    for path in _write_trace(trace, args.out, stem, args.format, not args.no_timings):
        print(f"wrote {path}")
    n_bad = int((~trace.converged).sum())
    print(f"{trace.mode}: {trace.total_steps} steps, updates {trace.n_updates}, "
          f"solver {trace.solver_seconds:.3f} s, inclusive {trace.inclusive_seconds:.3f} s, "
          f"non-converged solves {n_bad}")


def cmd_compare(args):
    a = read_trace(args.a, mode="a")
    b = read_trace(args.b, mode="b")
    report = compare(a, b, full_state=args.full_state)
    export(report, args.out)
    print(f"relative error {report.rel_error:.3e}")
    print(f"solver time a {report.wall_a:.3f} s, b {report.wall_b:.3f} s, "
          f"speed-up {report.speed_up:.2f}x")
    print(f"inclusive time a {report.inclusive_a:.3f} s, b {report.inclusive_b:.3f} s, "
          f"speed-up {report.speed_up_inclusive:.2f}x")
    print(f"wrote {args.out}")


def build_parser():
    p = _Parser(prog="edmdmpc", description="EDMD surrogate MPC for a dose-driven "
                "population model.")
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__} (kernels: {BACKEND})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="uncontrolled or fixed-dose plant run")
    s.add_argument("--scenario", help="scenario JSON (default scenario if omitted)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--fixed-dose", type=float, help="dose at every injection time")
    s.add_argument("--format", choices=("csv", "json", "both"), default="csv")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="collect snapshots and fit the surrogate")
    f.add_argument("--scenario")
    f.add_argument("--mode", choices=("edmd-c", "edmd-d"), required=True)
    f.add_argument("--out", required=True, help="model JSON path")
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("mpc", help="closed-loop run, exports the trace")
    m.add_argument("--scenario")
    m.add_argument("--mode", choices=("edmd-c", "edmd-d", "nonlinear"))
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--seed", type=int)
    m.add_argument("--format", choices=("csv", "json", "both"), default="both")
    m.add_argument("--no-timings", action="store_true",
                   help="blank wall times (byte-identical reruns)")
    m.set_defaults(func=cmd_mpc)

    c = sub.add_parser("compare", help="relative error and speed-up of trace a vs b")
    c.add_argument("--a", required=True, help="candidate trace (csv or json)")
    c.add_argument("--b", required=True, help="reference trace (csv or json)")
    c.add_argument("--out", required=True, help="report path (.json or .csv)")
    c.add_argument("--full-state", action="store_true",
                   help="also report the space-time state error (JSON traces)")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except _UsageExit:
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"edmdmpc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (EdmdMpcError, OSError, ValueError) as exc:
        print(f"edmdmpc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
