"""Command-line entry point: ``scchain <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .ensembles import build, parse_spec
from .evolution import decodable_region_epsilon, threshold
from .harness import (
    ConfigError,
    RunExists,
    build_config,
    ensemble_summary,
    load_ensemble,
    overlay,
    parse_grid,
    read_config_file,
    run_experiment,
    trajectory_csv,
)
from .scaling import ALPHA_SHORT, THETA, ScalingParams, prediction_rows


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, dest="base_seed")
    p.add_argument("--threads", type=int)
    p.add_argument("--config", help="flat key=value config file")


def _ensemble_arg(p):
    p.add_argument("--ensemble", required=True, help="matrix file or spec such as single:3,6,25")


def cmd_ensemble(a) -> int:
    if a.spec:
        T = parse_spec(a.spec)
    else:
        params = {k: v for k, v in (("L", a.L), ("p", a.p), ("N", a.N), ("t", a.t)) if v is not None}
        T = build(a.family, a.l, a.r, **params)
    summary = json.dumps(ensemble_summary(T), indent=2)
    if a.out:
        out = Path(a.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "matrix.txt").write_text(T.to_text())
        (out / "summary.json").write_text(summary + "\n")
    else:
        sys.stdout.write(T.to_text())
        print(summary)
    return 0


def cmd_evolve(a) -> int:
    T = load_ensemble(a.ensemble)
    text = trajectory_csv(T, a.eps, a.stride, a.step)
    if a.out:
        Path(a.out).mkdir(parents=True, exist_ok=True)
        (Path(a.out) / "trajectory.csv").write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_threshold(a) -> int:
    T = load_ensemble(a.ensemble)
    if a.region == "outer":
        res = decodable_region_epsilon(T, T.outer_positions(), a.tol)
    elif a.region:
        pos = [int(x) - 1 for x in a.region.split(",")]
        res = decodable_region_epsilon(T, pos, a.tol)
    else:
        res = threshold(T, a.tol)
    payload = json.dumps({"epsilon_star": res.epsilon_star, "tol": a.tol, "probes": res.trajectories_evaluated})
    if a.out:
        Path(a.out).mkdir(parents=True, exist_ok=True)
        (Path(a.out) / "threshold.json").write_text(payload + "\n")
    print(payload)
    return 0


def _run(a, mode: str, extra: dict) -> int:
    file_values = read_config_file(a.config) if a.config else {}
    cli = {"ensemble": a.ensemble, "mode": mode, "M": a.M, "trials": a.trials,
           "base_seed": a.base_seed, "threads": a.threads, "out": a.out, **extra}
    cfg = build_config(file_values, cli)
    out = run_experiment(cfg, overwrite=a.overwrite)
    print(out)
    return 0


def cmd_simulate(a) -> int:
    grid = None
    if a.channel == "biawgn":
        grid = parse_grid(a.ebn0) if a.ebn0 else None
    elif a.eps or a.eps_list:
        grid = parse_grid(a.eps or a.eps_list)
    extra = {"channel": a.channel, "grid": grid, "decoder": a.decoder,
             "avoid_4cycles": True if a.avoid_4cycles else None}
    return _run(a, "simulate", extra)


def cmd_window(a) -> int:
    return _run(a, "window", {"grid": parse_grid(a.eps), "W": a.W, "avoid_4cycles": True if a.avoid_4cycles else None})


def cmd_scaling(a) -> int:
    params = ScalingParams(a.alpha, a.theta, a.ybar, a.eps_star, a.M, a.L)
    if a.delta:
        deltas = parse_grid(a.delta)
    else:
        deltas = [round(a.eps_star - e, 12) for e in parse_grid(a.eps)]
    lines = ["eps,delta_eps,p_short,mu0,p_long"]
    for row in prediction_rows(params, deltas, a.n_chains):
        lines.append(",".join(repr(float(x)) for x in row))
    text = "\n".join(lines) + "\n"
    if a.out:
        Path(a.out).mkdir(parents=True, exist_ok=True)
        (Path(a.out) / "prediction.csv").write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_overlay(a) -> int:
    text = overlay(a.bler, a.prediction, a.column)
    if a.out:
        Path(a.out).mkdir(parents=True, exist_ok=True)
        (Path(a.out) / "overlay.csv").write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scchain", description="Spatially coupled chain ensembles workbench")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ensemble", help="build a connectivity matrix")
    p.add_argument("--spec")
    p.add_argument("--family", default="single", choices=["single", "modified", "loop", "multilayer"])
    p.add_argument("--l", type=int, default=3)
    p.add_argument("--r", type=int, default=6)
    p.add_argument("--L", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("evolve", help="integrate the mean evolution")
    _ensemble_arg(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--stride", type=float, default=0.1)
    p.add_argument("--step", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("threshold", help="threshold by bisection")
    _ensemble_arg(p)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--region", help="'outer' or comma list of 1-based positions")
    p.add_argument("--out")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("simulate", help="Monte Carlo block error rates")
    _ensemble_arg(p)
    _common(p)
    p.add_argument("--M", type=int)
    p.add_argument("--eps")
    p.add_argument("--eps-list")
    p.add_argument("--ebn0")
    p.add_argument("--channel", default="bec", choices=["bec", "biawgn"])
    p.add_argument("--decoder", default="pd", choices=["pd", "bp"])
    p.add_argument("--trials", type=int)
    p.add_argument("--avoid-4cycles", action="store_true")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("window-sim", help="paired full vs window decoding")
    _ensemble_arg(p)
    _common(p)
    p.add_argument("--M", type=int)
    p.add_argument("--eps", required=True)
    p.add_argument("--W", type=int, default=12)
    p.add_argument("--trials", type=int)
    p.add_argument("--avoid-4cycles", action="store_true")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_window)

    p = sub.add_parser("scaling", help="scaling-law predictions")
    p.add_argument("--alpha", type=float, default=ALPHA_SHORT)
    p.add_argument("--theta", type=float, default=THETA)
    p.add_argument("--ybar", type=float, default=0.0)
    p.add_argument("--eps-star", type=float, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--n-chains", type=int, default=1)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--delta")
    g.add_argument("--eps")
    p.add_argument("--out")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("overlay", help="join empirical and predicted tables")
    p.add_argument("--bler", required=True)
    p.add_argument("--prediction", required=True)
    p.add_argument("--column", choices=["p_short", "p_long", "bler"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_overlay)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, RunExists, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
