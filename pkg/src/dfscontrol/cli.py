"""Command-line interface.

Subcommands: ``run`` (single closed-loop trajectory), ``sweep``
(initial-state grid), ``decay-scan`` (common decay rate scan), ``compare``
(control-without-decay vs decay-without-control convergence maps) and
``verify-dfs`` (check the dark subspace against the model). Exit status is 0
on success, 1 when a DFS check fails, 2 on configuration errors, 3 when a
run aborts on a state-validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .core import StateValidationError
from .dfs import verify_dfs
from .experiments import (
    compare_control_vs_decay,
    config_from_dict,
    decay_scan,
    load_config,
    parse_grid_spec,
    run_single,
    sweep_initial_states,
)
from .fourlevel import build_model, dark_states
from .lindblad import TrajectoryValidationError

EXIT_OK = 0
EXIT_DFS_FAIL = 1
EXIT_CONFIG = 2
EXIT_VALIDATION = 3


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file (angles in units of pi)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--dt", type=float, help="integrator step override")
    common.add_argument("--t-max", type=float, dest="t_max", help="final time override")
    common.add_argument(
        "--epsilon", type=float, help="convergence threshold epsilon (P_DFS >= 1 - epsilon)"
    )
    common.add_argument(
        "--no-control", action="store_true", help="disable the feedback fields"
    )
    common.add_argument(
        "--seed-grid",
        metavar="SPEC",
        dest="seed_grid",
        help="grid override, e.g. 'beta1=0:0.5:0.05,beta3=0.25' (units of pi)",
    )
    common.add_argument(
        "--workers", type=int, help="parallel worker processes for sweep/compare"
    )

    parser = argparse.ArgumentParser(
        prog="dfscontrol",
        description="Drive an open quantum system into its decoherence-free subspace "
        "by Lyapunov state feedback (four-level example).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single closed-loop run")
    sub.add_parser("sweep", parents=[common], help="initial-state grid sweep")
    sub.add_parser("decay-scan", parents=[common], help="scan a common decay rate")
    sub.add_parser(
        "compare", parents=[common], help="controlled (gamma=0) vs decay-only convergence maps"
    )
    sub.add_parser("verify-dfs", parents=[common], help="check the dark subspace conditions")
    return parser


def _load(args) -> tuple:
    if args.config:
        cfg, grid = load_config(args.config)
    else:
        cfg, grid = config_from_dict({})
    overrides = {}
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.t_max is not None:
        overrides["t_max"] = args.t_max
    if args.epsilon is not None:
        overrides["epsilon_conv"] = args.epsilon
    if overrides:
        cfg = replace(cfg, **overrides)
    if args.no_control:
        cfg = replace(cfg, control=replace(cfg.control, enabled=False))
    if args.seed_grid:
        grid = parse_grid_spec(args.seed_grid)
    return cfg, grid


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg, grid = _load(args)
    except (OSError, ValueError, KeyError, StateValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    try:
        if args.command == "run":
            _traj, summary = run_single(cfg, out_dir=out)
            print(
                "run: final P_DFS = {p:.6f}, T_conv = {t}, dV violations = {v}".format(
                    p=summary["final_P_DFS"],
                    t="none" if summary["T_conv"] is None else f"{summary['T_conv']:.6g}",
                    v=summary["dV_violations"],
                )
            )
            print(f"wrote {out / 'trajectory.csv'} and {out / 'summary.json'}")
        elif args.command == "sweep":
            result = sweep_initial_states(cfg, grid, out_dir=out, workers=args.workers)
            print(f"sweep: {len(result.rows)} points, {result.n_failed} failed")
            print(f"wrote {out / 'sweep.csv'}")
            if result.n_failed:
                return EXIT_VALIDATION
        elif args.command == "decay-scan":
            result = decay_scan(cfg, out_dir=out)
            finals = [r["final_P_DFS"] for r in result["runs"]]
            print(
                "decay-scan: {n} rates, final P_DFS in [{lo:.6f}, {hi:.6f}]".format(
                    n=len(finals), lo=min(finals), hi=max(finals)
                )
            )
            print(f"wrote {out / 'decay_surface.csv'} and {out / 'decay_tconv.csv'}")
        elif args.command == "compare":
            result = compare_control_vs_decay(cfg, grid, out_dir=out, workers=args.workers)
            s = result["summary"]
            frac = s["fraction_control_faster"]
            print(
                "compare: control faster than decay at {k}/{n} comparable points"
                " (fraction {f})".format(
                    k=s["n_control_faster"],
                    n=s["n_both_finite"],
                    f="n/a" if frac is None else f"{frac:.3f}",
                )
            )
            print(f"wrote {out / 'compare.csv'} and {out / 'compare_summary.json'}")
        elif args.command == "verify-dfs":
            model = build_model(cfg.params)
            target = dark_states(cfg.params.theta, cfg.params.phi)
            report = verify_dfs(target, model)
            print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
            if not report.passed:
                return EXIT_DFS_FAIL
    except TrajectoryValidationError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StateValidationError as exc:
        print(f"invalid state: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
