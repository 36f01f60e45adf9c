"""Command line entry point: ``gridconsensus <command> [options]``.

Exit codes: 0 success, 1 a check failed, 2 usage or config error,
3 numerical abort (voltage collapse or non-finite state).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .generator import ParameterError, VoltageCollapseError, derive_line_susceptances
from .report import build_report, consensus_sweep, verify, write_trace
from .scenario import ConfigError, builtin_four_area, load_scenario
from .simulation import NonFiniteStateError, SimConfig, compare_traces, run, run_closed_loop, run_decoupled

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _add_common(p):
    p.add_argument("--config", type=Path, help="scenario TOML file (default: built-in four-area grid)")
    p.add_argument("--out", type=Path, help="output path for the trace / results")
    p.add_argument("--dt", type=float, help="integration step [s]")
    p.add_argument("--horizon", type=float, help="simulated time [s]")
    p.add_argument("--mode", choices=("closed_loop", "decoupled", "open_loop"))
    p.add_argument("--decimate", type=int, help="keep every n-th sample in the trace")
    p.add_argument("--raw-equilibrium", action="store_true", help="integrate the table values without re-deriving P_G and E_ex")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="gridconsensus", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "integrate a scenario and write the trace and run report"),
        ("verify", "simulate and run every dissipation, Lyapunov and steady-state check"),
        ("derive-susceptances", "fit line susceptances to the operating point"),
        ("compare-decoupling", "max state gap between the nonlinear closed loop and the linear loops"),
        ("consensus-sweep", "consensus on random connected grids, one per seed"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "consensus-sweep":
            p.add_argument("--count", type=int, default=50, help="number of seeds starting at --seed")
            p.add_argument("--jobs", type=int, default=1)
    return parser


def _scenario(args):
    s = load_scenario(args.config) if args.config else builtin_four_area()
    sim = {k: getattr(args, k) for k in ("dt", "horizon", "mode", "decimate") if getattr(args, k, None) is not None}
    if sim:
        s = replace(s, sim=replace(s.sim, **sim))
    if args.raw_equilibrium:
        s = replace(s, raw_equilibrium=True)
    return s


def _emit(args, payload: dict):
    text = json.dumps(payload, indent=2, default=float)
    if args.out:
        args.out.write_text(text + "\n")
    print(text)


def cmd_simulate(args):
    s = _scenario(args)
    trace = run(s)
    report = build_report(trace, s)
    if args.out:
        write_trace(args.out, trace, s, args.format)
        args.out.with_suffix(".report.json").write_text(report.to_json() + "\n")
    print(report.summary())
    return EXIT_OK


def cmd_verify(args):
    s = _scenario(args)
    report = verify(s)
    if args.out:
        args.out.write_text(report.to_json() + "\n")
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_CHECK


def cmd_derive(args):
    s = _scenario(args)
    fit = derive_line_susceptances(s.generators, s.equilibrium, s.network)
    _emit(
        args,
        {
            "edges": [list(e) for e in s.network.edges],
            "susceptance": [float(b) for b in fit.susceptance],
            "max_residual": fit.max_residual,
        },
    )
    return EXIT_OK


def cmd_compare(args):
    s = _scenario(args)
    s = replace(s, sim=replace(s.sim, mode="closed_loop"))
    gap = compare_traces(run_closed_loop(s), run_decoupled(s))
    _emit(args, {"scenario": s.name, "raw_equilibrium": s.raw_equilibrium, "max_discrepancy": gap})
    return EXIT_OK


def cmd_sweep(args):
    horizon = args.horizon if args.horizon is not None else 200.0
    dt = args.dt if args.dt is not None else SimConfig().dt
    rows = consensus_sweep(range(args.seed, args.seed + args.count), horizon=horizon, dt=dt, jobs=args.jobs)
    for r in rows:
        print(
            f"seed {r['seed']:>4}  N={r['nodes']}  L={r['edges']:>2}  "
            f"angle consensus {r['consensus_angle']:.3e}  max|dV| {r['max_volt_dev']:.3e}  "
            f"{'ok' if r['ok'] else 'FAIL'}"
        )
    if args.out:
        args.out.write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK if all(r["ok"] for r in rows) else EXIT_CHECK


COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "derive-susceptances": cmd_derive,
    "compare-decoupling": cmd_compare,
    "consensus-sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.set_printoptions(precision=6)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VoltageCollapseError, NonFiniteStateError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
