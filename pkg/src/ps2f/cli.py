"""Command-line entry points.

Each case subcommand runs at desk scale and writes its artifacts (log,
set boundaries, summary) into --out; dare prints the terminal-cost data;
serve starts the teleoperation service. Everything is deterministic, so
repeated runs produce identical files apart from wall-clock columns.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ps2f import logio
from ps2f.cases import (
    CASE1_X0,
    case1_config,
    case3_config,
    config_to_dict,
    load_config,
    run_baseline_case3,
    run_case1,
    run_case3,
)
from ps2f.filter import sample_s2_set
from ps2f.linear import max_ellipsoid_level, solve_dare
from ps2f.nominal import solve_nominal
from ps2f.simulate import ClosedLoopAssertionError, parameter_sweep_s2

DEFAULT_SWEEPS = [
    ("a", [0.0, 0.5, 0.95]),
    ("M", [1, 2, 5]),
    ("N", [1, 2, 5]),
    ("Q", [0.1, 1.0, 10.0]),
]


def _add_common(p: argparse.ArgumentParser, steps: int, grid: int) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="JSON config overriding the embedded default")
    p.add_argument("--out", type=Path, default=None,
                   help="output directory for artifacts")
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--grid", type=int, default=grid,
                   help="set-boundary grid resolution (0 disables)")
    p.add_argument("--assert", dest="assertions", choices=("on", "off"),
                   default="on")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")


def _write_log(log, out: Path, stem: str, fmt: str) -> Path:
    path = out / f"{stem}-log.{fmt}"
    if fmt == "csv":
        logio.write_log_csv(log, path)
    else:
        logio.write_log_jsonl(log, path)
    return path


def _write_boundary(cfg, x, a, M, grid: int, out: Path, stem: str) -> None:
    if grid <= 0:
        return
    nominal = solve_nominal(cfg, x)
    if not nominal.feasible:
        return
    g = sample_s2_set(cfg, x, nominal, a, M, grid_resolution=grid)
    logio.write_boundary_json(g, out / f"{stem}-boundary.json")
    logio.write_grid_csv(g, out / f"{stem}-grid.csv")


def _finish(log, out: Path, stem: str, fmt: str,
            failed: str = None) -> int:
    summary = logio.summarize(log)
    if failed is not None:
        summary["failed_invariant"] = failed
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_log(log, out, stem, fmt)
        logio.write_json(summary, out / f"{stem}-summary.json")
    line = (f"{stem}: steps={summary['steps']} "
            f"violations={summary['violations']} "
            f"min_margin={summary['min_margin']:.3e}")
    if summary.get("final_state_norm") is not None:
        line += f" |x_end|={summary['final_state_norm']:.3e}"
    if failed is not None:
        line += f" FAILED: {failed}"
    print(line)
    return 1 if failed is not None else 0


def cmd_case1(args) -> int:
    cfg = load_config(args.config) if args.config else case1_config()
    try:
        log = run_case1(steps=args.steps, assertions=args.assertions == "on",
                        cfg=cfg)
    except ClosedLoopAssertionError as e:
        return _finish(e.log, args.out, "case1", args.format, failed=str(e))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_boundary(cfg, CASE1_X0, cfg.a, cfg.M, args.grid, args.out,
                        "case1")
    return _finish(log, args.out, "case1", args.format)


def cmd_case2(args) -> int:
    cfg = load_config(args.config) if args.config else case1_config()
    entries = parameter_sweep_s2(cfg, CASE1_X0, DEFAULT_SWEEPS,
                                 grid_resolution=args.grid)
    rows = []
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
    for e in entries:
        rows.append({"parameter": e.parameter, "value": e.value,
                     "feasible": e.feasible,
                     "member_count": e.member_count})
        print(f"case2: {e.parameter}={e.value:g} "
              + (f"members={e.member_count}" if e.feasible else "infeasible"))
        if args.out is None or not e.feasible:
            continue
        stem = f"case2-{e.parameter}-{e.value:g}"
        data = [[[float(a), float(b)] for a, b in line] for line in e.boundary]
        (args.out / f"{stem}-boundary.json").write_text(
            json.dumps(data) + "\n")
    if args.out is not None:
        logio.write_json({"grid": args.grid, "entries": rows},
                         args.out / "case2-summary.json")
    return 0


def cmd_case3(args) -> int:
    cfg = load_config(args.config) if args.config else case3_config()
    stem = f"case3-{args.variant}"
    if args.variant == "baseline":
        log = run_baseline_case3(Ks=args.ks, steps=args.steps, cfg=cfg)
        return _finish(log, args.out, stem, args.format)
    try:
        log = run_case3(steps=args.steps, Ks=args.ks,
                        assertions=args.assertions == "on", cfg=cfg)
    except ClosedLoopAssertionError as e:
        return _finish(e.log, args.out, stem, args.format, failed=str(e))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_boundary(cfg, np.zeros(3), 100.0, cfg.M, args.grid, args.out,
                        stem)
    return _finish(log, args.out, stem, args.format)


def cmd_dare(args) -> int:
    cfg = load_config(args.config) if args.config else case1_config()
    if cfg.model.kind != "linear":
        print("dare: linear config required", file=sys.stderr)
        return 2
    r = solve_dare(cfg.model.A, cfg.model.B, cfg.cost.Q, cfg.cost.R)
    gamma = max_ellipsoid_level(r.P, r.K, cfg.X, cfg.U)
    with np.printoptions(precision=4, suppress=True):
        print("P =")
        print(r.P)
        print("K =")
        print(r.K)
    print(f"gamma = {gamma:.4f}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        logio.write_json({"P": r.P.tolist(), "K": r.K.tolist(),
                          "gamma": gamma}, args.out / "dare.json")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from ps2f.service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def cmd_config(args) -> int:
    cfg = case1_config() if args.case == "case1" else case3_config()
    print(json.dumps(config_to_dict(cfg), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ps2f",
        description="predictive safety-stability filter toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p1 = sub.add_parser("case1", help="double-integrator run")
    _add_common(p1, steps=100, grid=41)
    p1.set_defaults(fn=cmd_case1)

    p2 = sub.add_parser("case2", help="set-geometry parameter sweeps")
    _add_common(p2, steps=0, grid=41)
    p2.set_defaults(fn=cmd_case2)

    p3 = sub.add_parser("case3", help="unicycle go-stay-return run")
    _add_common(p3, steps=150, grid=0)
    p3.add_argument("--variant", choices=("ps2f", "baseline"),
                    default="ps2f")
    p3.add_argument("--ks", type=int, default=30,
                    help="switch index of the command and a-schedule")
    p3.set_defaults(fn=cmd_case3)

    pd = sub.add_parser("dare", help="terminal cost, gain, and level set")
    pd.add_argument("--config", type=Path, default=None)
    pd.add_argument("--out", type=Path, default=None)
    pd.set_defaults(fn=cmd_dare)

    ps = sub.add_parser("serve", help="live teleoperation service")
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8000)
    ps.set_defaults(fn=cmd_serve)

    pc = sub.add_parser("config", help="print an embedded default config")
    pc.add_argument("--case", choices=("case1", "case3"), default="case1")
    pc.set_defaults(fn=cmd_config)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
