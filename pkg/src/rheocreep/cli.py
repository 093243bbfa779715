"""Command-line interface.

Exit codes: 0 success, 1 usage or validation failure, 2 solver failure.
"""

import argparse
from dataclasses import replace
import os
import sys

import numpy as np

from . import scenarios, stratified
from .config import ConfigInvalid, ParseError, parse_config, parse_config_text
from .galerkin.assembly import ProjectionViolatesDeterminant
from .simulation import SimulationFailed, read_energy_csv, recompute_balance, simulate
from .weakform import fd_check_all

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2
FD_TOLERANCE = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _err(msg):
    print(msg, file=sys.stderr)


# -- subcommands -------------------------------------------------------------------

def cmd_simulate(args):
    try:
        if args.scenario:
            cfg = parse_config_text(scenarios.read_text(args.scenario))
        else:
            cfg = parse_config(args.config)
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_INVALID
    except KeyError as exc:
        _err(str(exc.args[0]))
        return EXIT_INVALID
    except (ParseError, ConfigInvalid) as exc:
        _err(str(exc))
        return EXIT_INVALID
    if args.restart:
        cfg = replace(cfg, restart=args.restart)
    try:
        result = simulate(cfg, args.out, log=None if args.quiet else _err)
    except (ProjectionViolatesDeterminant, ValueError, OSError) as exc:
        _err(f"invalid run setup: {exc}")
        return EXIT_INVALID
    except SimulationFailed as exc:
        _err(f"{exc}\nlast accepted state dumped to {exc.dump_path}")
        return EXIT_SOLVER
    print(f"completed {result.steps} steps to t = {result.t_final:.6g} "
          f"({result.rejected} rejected); min det Π = {result.min_det_P:.6g}, "
          f"min det ∇y = {result.min_det_grad_y:.6g}; "
          f"max balance residual = {result.max_balance_residual:.3e}")
    print(f"outputs in {args.out}")
    return EXIT_OK


def _audit_paths(out):
    if out.endswith(".csv"):
        parent = os.path.dirname(out) or "."
        return out, os.path.join(parent, "summary.txt")
    return os.path.join(out, "audit.csv"), os.path.join(out, "summary.txt")


def cmd_audit(args):
    try:
        profile = stratified.SlipProfile(args.profile, args.ell, args.width)
        t_grid = stratified.default_time_grid(args.t_max, args.points)
        report = stratified.audit(profile, t_grid=t_grid, kappa=args.kappa, quad_points=args.quad_points)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID
    csv_path, summary_path = _audit_paths(args.out)
    os.makedirs(os.path.dirname(csv_path) or ".", exist_ok=True)
    stratified.write_audit_csv(report, csv_path)
    extra = {"profile": profile.label, "ell": profile.ell,
             "mean_rate_gradient_12": stratified.mean_rate_gradient(profile, t_grid[-1])[0, 1],
             "mean_slip_gradient_at_t_max": stratified.mean_slip_gradient(profile, t_grid[-1])}
    stratified.write_audit_summary(report, summary_path, extra)
    for e in report.entries:
        expo = "" if not np.isfinite(e.exponent) else f" exponent {e.exponent:.4f}"
        print(f"{e.kind.value:14s} {e.classification}{expo}")
    print(f"wrote {csv_path} and {summary_path}")
    return EXIT_OK


def cmd_verify(args):
    if args.dim not in (2, 3):
        _err("--dim must be 2 or 3")
        return EXIT_INVALID
    if args.trials < 1:
        _err("--trials must be >= 1")
        return EXIT_INVALID
    worst = fd_check_all(seed=args.seed, trials=args.trials, d=args.dim)
    ok = True
    for name, err in worst.items():
        flag = "ok" if err <= args.tol else "FAIL"
        ok &= err <= args.tol
        print(f"{name:12s} max rel. error {err:.3e}  {flag}")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_energy_report(args):
    path = args.run if args.run.endswith(".csv") else os.path.join(args.run, "energy.csv")
    try:
        series = read_energy_csv(path)
    except OSError as exc:
        _err(f"cannot read energy series: {exc}")
        return EXIT_INVALID
    except ValueError as exc:
        _err(f"malformed energy series {path}: {exc}")
        return EXIT_INVALID
    recomputed = recompute_balance(series)
    stored = series["elastic"] + series["constraint"] + series["gradient"]
    print("t,total_energy,dissipated,work_ext,balance_residual")
    for i in range(len(series["t"])):
        total = series["kinetic"][i] + stored[i]
        diss = series["diss_kv"][i] + series["diss_m"][i] + series["diss_h"][i]
        print(f"{series['t'][i]:.6g},{total:.10g},{diss:.10g},{series['work_ext'][i]:.10g},"
              f"{recomputed[i]:.3e}")
    span = series["t"][-1] - series["t"][0]
    per_time = recomputed[-1] / span if span > 0 else 0.0
    print(f"max balance residual {recomputed.max():.3e}; final residual per unit time {per_time:.3e}; "
          f"peak stored energy {stored.max():.6g}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="rheocreep", description="Finite-strain Jeffreys creep toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a time-dependent simulation")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="configuration file")
    src.add_argument("--scenario", help="name of a shipped scenario (" + ", ".join(scenarios.names()) + ")")
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--restart", help="continue from a field dump")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("audit-hardening", help="regularizer growth on the sheared stripe")
    p.add_argument("--profile", choices=("linear", "tanh"), default="tanh")
    p.add_argument("--ell", type=float, default=1.0)
    p.add_argument("--width", type=float, default=0.2)
    p.add_argument("--t-max", type=float, default=100.0)
    p.add_argument("--points", type=int, default=41)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--quad-points", type=int, default=200)
    p.add_argument("--out", default="audit.csv", help="CSV path or output directory")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("verify-derivatives", help="finite-difference check of all driving forces")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--tol", type=float, default=FD_TOLERANCE)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("energy-report", help="recompute the energy balance of a finished run")
    p.add_argument("--run", required=True, help="run directory or energy.csv path")
    p.set_defaults(func=cmd_energy_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_INVALID
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_INVALID
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
