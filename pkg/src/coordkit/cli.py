"""Command-line interface: ``coordkit {check,run,validate,list-scenarios}``.

Exit codes: 0 ok, 1 usage/schema/parse error, 2 infeasible at check (or an
infeasible initial state), 3 runtime infeasibility, 4 constraint violations.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import CoordkitError, InitialStateInfeasible
from .feasibility import assemble, check_feasibility
from .kinematics import JointState
from .logio import read_csv, write_csv, write_report
from .scenarios import builtin_scenarios, load_scenario
from .sim import monitor, run

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_RUNTIME, EXIT_VIOLATION = 0, 1, 2, 3, 4
DEFAULT_OUT = "coordkit_out"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser():
    p = _Parser(prog="coordkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    c = sub.add_parser("check", help="rank test at the initial state")
    c.add_argument("scenario", help="builtin name or path to a scenario JSON file")
    r = sub.add_parser("run", help="simulate and write trajectory.csv and report.json")
    r.add_argument("scenario")
    r.add_argument("--h", type=float, help="integration step (s)")
    r.add_argument("--T", type=float, help="duration (s)")
    r.add_argument("--seed", type=int, help="seed for the random policy")
    r.add_argument("--out", help=f"output directory (default: $COORDKIT_OUT or ./{DEFAULT_OUT})")
    v = sub.add_parser("validate", help="re-run the monitor on a stored trajectory")
    v.add_argument("log", help="trajectory CSV written by 'run'")
    v.add_argument("scenario")
    sub.add_parser("list-scenarios", help="print the builtin scenario names")
    return p


def _err(msg):
    print(f"coordkit: {msg}", file=sys.stderr)


def _check(args):
    sc = load_scenario(args.scenario, check_initial=False)
    cfg = sc.sim_config()
    P = JointState(sc.models, sc.initial_state)
    eq = [c for c in sc.constraints if c.flavor == "equality"]
    ineq = [c for c in sc.constraints if c.flavor == "inequality"]
    stack = assemble(sc.models, eq, ineq, P, 0.0, cfg.eps_act)
    feas = check_feasibility(stack)
    print(f"scenario: {sc.name}")
    print(f"verdict: {feas.status}")
    print(f"rank(Omega): {feas.rank}")
    print(f"rank([Omega|T]): {feas.rank_augmented}")
    print(f"kappa: {feas.kappa}")
    print(f"active inequality rows: {len(stack.inequality_labels)}")
    return EXIT_OK if feas else EXIT_INFEASIBLE


def _out_dir(args):
    return Path(args.out or os.environ.get("COORDKIT_OUT") or DEFAULT_OUT)


def _run(args):
    sc = load_scenario(args.scenario)
    cfg = sc.sim_config(h=args.h, T=args.T, seed=args.seed)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    try:
        log = run(sc, cfg)
        failed = None
    except CoordkitError as exc:
        log = getattr(exc, "log", None)
        failed = exc
        if log is None:
            raise
    rep = monitor(log, sc.constraints)
    write_csv(log, out / "trajectory.csv")
    write_report(out / "report.json", log, rep, sc, cfg)
    print(f"wrote {out / 'trajectory.csv'} ({len(log.samples)} samples) and {out / 'report.json'}")
    if failed is not None:
        _err(f"runtime infeasibility: {failed}")
        return EXIT_RUNTIME
    if rep.total_violations:
        print(f"violations: {rep.total_violations}")
        return EXIT_VIOLATION
    print("violations: 0")
    return EXIT_OK


def _validate(args):
    sc = load_scenario(args.scenario, check_initial=False)
    pipe = sc.pipeline()
    log = read_csv(args.log, sc.models, pipe.row_labels, pipe.ineq_labels)
    rep = monitor(log, sc.constraints)
    for r in rep.rows:
        print(f"{r.id}.{r.row} {r.flavor} max={r.max:.6g} at t={r.argmax_t:.6g} violations={r.violations}")
    print(f"cone failures: {rep.cone_failures}")
    print(f"samples: {rep.samples}, violations: {rep.total_violations}")
    return EXIT_VIOLATION if rep.total_violations else EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "list-scenarios":
        for name in builtin_scenarios():
            print(name)
        return EXIT_OK
    handler = {"check": _check, "run": _run, "validate": _validate}[args.command]
    try:
        return handler(args)
    except InitialStateInfeasible as exc:
        _err(f"infeasible initial state: {exc}")
        return EXIT_INFEASIBLE
    except CoordkitError as exc:
        if args.command == "check":
            _err(f"infeasible: {exc}")
            return EXIT_INFEASIBLE if not isinstance(exc, (ValueError, KeyError)) else EXIT_USAGE
        if args.command == "run" and not isinstance(exc, (ValueError, KeyError)):
            _err(f"runtime infeasibility: {exc}")
            return EXIT_RUNTIME
        _err(str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
