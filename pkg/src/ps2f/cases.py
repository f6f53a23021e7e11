"""Benchmark configurations and their canonical closed-loop runs.

Two setups are wired end to end: a double integrator with an ellipsoidal
terminal set, driven by a scripted oscillating command, and a unicycle
with a terminal point constraint, driven by a goal-seeking command that
switches from an out-of-bounds target back to the origin. Configs also
round-trip through plain dicts for files and the service boundary.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ps2f.linear import max_ellipsoid_level, solve_dare
from ps2f.simulate import (
    Case1Signal,
    ClosedLoopLog,
    DiscountedGoal,
    Switched,
    run_closed_loop,
    run_unfiltered,
)
from ps2f.types import (
    BoxSet,
    ModeSchedule,
    Ps2fConfig,
    QuadraticCost,
    SystemModel,
    TerminalSet,
)

CASE1_X0 = np.array([2.0, -2.0])
CASE1_STEPS = 100
CASE3_GOAL = np.array([0.5, 0.5])
CASE3_KS = 30
CASE3_STEPS = 150
CASE3_GOAL_H = 5
CASE3_GOAL_DISCOUNT = 0.9


def case1_config() -> Ps2fConfig:
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.eye(2)
    Q = 10.0 * np.eye(2)
    R = np.eye(2)
    r = solve_dare(A, B, Q, R)
    X = BoxSet(-2.0 * np.ones(2), 2.0 * np.ones(2))
    U = BoxSet(-np.ones(2), np.ones(2))
    gamma = max_ellipsoid_level(r.P, r.K, X, U)
    return Ps2fConfig(
        model=SystemModel(kind="linear", state_dim=2, input_dim=2, A=A, B=B),
        N=5, M=2, a=0.95,
        cost=QuadraticCost(Q=Q, R=R, P_f=r.P),
        X=X, U=U,
        Xf=TerminalSet(kind="ellipsoid", P=r.P, gamma=gamma),
    )


def case3_config() -> Ps2fConfig:
    return Ps2fConfig(
        model=SystemModel(kind="unicycle", state_dim=3, input_dim=2, Ts=0.2),
        N=5, M=5, a=0.5,
        cost=QuadraticCost(Q=10.0 * np.eye(3), R=np.eye(2),
                           P_f=np.zeros((3, 3))),
        X=BoxSet(np.array([-0.5, -0.5, -np.pi / 3]),
                 np.array([0.5, 0.5, np.pi / 3])),
        U=BoxSet(-10.0 * np.ones(2), 10.0 * np.ones(2)),
        Xf=TerminalSet(kind="origin"),
    )


def config_to_dict(cfg: Ps2fConfig) -> dict:
    model = ({"kind": "linear", "A": cfg.model.A.tolist(),
              "B": cfg.model.B.tolist()}
             if cfg.model.kind == "linear"
             else {"kind": "unicycle", "Ts": cfg.model.Ts})
    Xf = ({"kind": "ellipsoid", "P": cfg.Xf.P.tolist(), "gamma": cfg.Xf.gamma}
          if cfg.Xf.kind == "ellipsoid" else {"kind": "origin"})
    return {
        "model": model,
        "N": cfg.N, "M": cfg.M, "a": cfg.a,
        "cost": {"Q": cfg.cost.Q.tolist(), "R": cfg.cost.R.tolist(),
                 "P_f": cfg.cost.P_f.tolist()},
        "X": {"lower": cfg.X.lower.tolist(), "upper": cfg.X.upper.tolist()},
        "U": {"lower": cfg.U.lower.tolist(), "upper": cfg.U.upper.tolist()},
        "Xf": Xf,
    }


def config_from_dict(d: dict) -> Ps2fConfig:
    """Inverse of config_to_dict. "dare" for P_f or Xf derives the
    terminal cost and the largest admissible ellipsoid from (A, B, Q, R);
    linear models only."""
    md = d["model"]
    if md["kind"] == "linear":
        A = np.asarray(md["A"], dtype=float)
        B = np.asarray(md["B"], dtype=float)
        model = SystemModel(kind="linear", state_dim=A.shape[0],
                            input_dim=B.shape[1], A=A, B=B)
    elif md["kind"] == "unicycle":
        model = SystemModel(kind="unicycle", state_dim=3, input_dim=2,
                            Ts=float(md["Ts"]))
    else:
        raise ValueError(f"unknown model kind: {md['kind']}")
    Q = np.asarray(d["cost"]["Q"], dtype=float)
    R = np.asarray(d["cost"]["R"], dtype=float)
    X = BoxSet(np.asarray(d["X"]["lower"], dtype=float),
               np.asarray(d["X"]["upper"], dtype=float))
    U = BoxSet(np.asarray(d["U"]["lower"], dtype=float),
               np.asarray(d["U"]["upper"], dtype=float))
    P_f = d["cost"].get("P_f", "dare")
    Xf_d = d.get("Xf", "dare")
    dare = None
    if P_f == "dare" or Xf_d == "dare":
        if model.kind != "linear":
            raise ValueError('"dare" terminal data needs a linear model')
        dare = solve_dare(model.A, model.B, Q, R)
    P_f = dare.P if P_f == "dare" else np.asarray(P_f, dtype=float)
    if Xf_d == "dare":
        gamma = max_ellipsoid_level(dare.P, dare.K, X, U)
        Xf = TerminalSet(kind="ellipsoid", P=dare.P, gamma=gamma)
    elif Xf_d["kind"] == "ellipsoid":
        Xf = TerminalSet(kind="ellipsoid",
                         P=np.asarray(Xf_d["P"], dtype=float),
                         gamma=float(Xf_d["gamma"]))
    else:
        Xf = TerminalSet(kind="origin")
    return Ps2fConfig(model=model, N=int(d["N"]), M=int(d["M"]),
                      a=float(d["a"]), cost=QuadraticCost(Q=Q, R=R, P_f=P_f),
                      X=X, U=U, Xf=Xf)


def load_config(path) -> Ps2fConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def case3_source(cfg: Ps2fConfig, Ks: int = CASE3_KS) -> Switched:
    """Drive toward the (infeasible) goal until Ks, then back home."""
    go = DiscountedGoal(cfg.model, CASE3_GOAL, CASE3_GOAL_H,
                        CASE3_GOAL_DISCOUNT, cfg.U)
    home = DiscountedGoal(cfg.model, np.zeros(2), CASE3_GOAL_H,
                          CASE3_GOAL_DISCOUNT, cfg.U)
    return Switched(go, home, Ks)


def run_case1(steps: int = CASE1_STEPS, assertions: bool = True,
              a: float = None, M: int = None,
              cfg: Ps2fConfig = None) -> ClosedLoopLog:
    cfg = case1_config() if cfg is None else cfg
    schedule = ModeSchedule.constant(cfg.a if a is None else a,
                                     cfg.M if M is None else M)
    return run_closed_loop(cfg, CASE1_X0, Case1Signal(), schedule, steps,
                           assertions=assertions)


def run_case3(steps: int = CASE3_STEPS, Ks: int = CASE3_KS,
              assertions: bool = True, cfg: Ps2fConfig = None) -> ClosedLoopLog:
    """Filtered go-then-return run; a relaxes from 100 to 0.5 at Ks."""
    cfg = case3_config() if cfg is None else cfg
    schedule = ModeSchedule.two_phase(100.0, 0.5, Ks, cfg.M)
    return run_closed_loop(cfg, np.zeros(3), case3_source(cfg, Ks), schedule,
                           steps, assertions=assertions)


def run_baseline_case3(Ks: int = CASE3_KS, steps: int = CASE3_STEPS,
                       cfg: Ps2fConfig = None) -> ClosedLoopLog:
    """Same command sequence applied raw; the heading box is unprotected
    and violations are expected for any Ks large enough to commit to the
    out-of-bounds goal."""
    cfg = case3_config() if cfg is None else cfg
    return run_unfiltered(cfg, np.zeros(3), case3_source(cfg, Ks), steps)
