"""Closed-loop execution and the command sources that drive it.

Each step solves the nominal OCP, filters the external command, applies
the result, and carries the shifted stack forward as a certified warm
start. Runtime assertions check constraint margins, the value-function
decrease, and feasibility of the carried candidate; failures abort with
the full log attached.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ps2f.filter import FilterResult, filter as apply_filter, sample_s2_set
from ps2f.linear import max_ellipsoid_level, solve_dare
from ps2f.nlp import NlpProblem, solve_nlp
from ps2f.nominal import (
    NominalSolution,
    solve_nominal,
    terminal_action,
    verify_sequences,
)
from ps2f.qp import OPTIMAL
from ps2f.types import (
    BoxSet,
    ModeSchedule,
    Ps2fConfig,
    QuadraticCost,
    SystemModel,
    TerminalSet,
)

Array = np.ndarray

_MARGIN_TOL = 1e-8
_DECREASE_TOL = 1e-5
_CANDIDATE_TOL = 1e-6


@dataclass
class LogRow:
    k: int
    x: Array
    u_ext: Array
    u: Array
    V: float
    a: float
    M: int
    stage_cost: float
    margins_X: Array
    margins_U: Array
    nominal_status: str
    filter_status: str
    used_fallback: bool
    t_nominal_ms: float
    t_filter_ms: float

    def min_margin(self) -> float:
        return float(min(np.min(self.margins_X), np.min(self.margins_U)))


@dataclass
class ClosedLoopLog:
    n: int
    m: int
    rows: List[LogRow] = field(default_factory=list)
    final_state: Optional[Array] = None
    final_value: Optional[float] = None

    def states(self) -> Array:
        return np.array([r.x for r in self.rows])

    def inputs(self) -> Array:
        return np.array([r.u for r in self.rows])

    def values(self) -> Array:
        return np.array([r.V for r in self.rows])

    def min_margin(self) -> float:
        return min(r.min_margin() for r in self.rows)

    def violation_count(self, tol: float = _MARGIN_TOL) -> int:
        return sum(1 for r in self.rows if r.min_margin() < -tol)

    def max_decrease_slack(self) -> float:
        """Worst violation of V(x+) <= V(x) - (1-a) l(x,u) over logged
        steps with a < 1; final_value closes the last step if present."""
        worst = -np.inf
        seq = [r.V for r in self.rows]
        if self.final_value is not None:
            seq.append(self.final_value)
        for i, r in enumerate(self.rows):
            if r.a >= 1.0 or i + 1 >= len(seq):
                continue
            worst = max(worst, seq[i + 1] - r.V + (1.0 - r.a) * r.stage_cost)
        return float(worst)


class ClosedLoopAssertionError(AssertionError):
    """Runtime invariant broke; carries everything logged so far."""

    def __init__(self, message: str, log: ClosedLoopLog):
        super().__init__(message)
        self.log = log


class Case1Signal:
    """The two-component command of the first case study; the cosine
    term deliberately exceeds the input box and is not clipped here."""

    def __call__(self, k: int, x: Array) -> Array:
        return np.array([-1.2 * np.cos(0.2 * k + 0.2), 0.1 * x[1]])


class Replay:
    def __init__(self, sequence):
        self.sequence = np.asarray(sequence, dtype=float)

    def __call__(self, k: int, x: Array) -> Array:
        return self.sequence[k]


class Live:
    """Wraps a channel handle exposing latest() -> vector or None;
    missing client means zero command (always admissible)."""

    def __init__(self, channel, m: int):
        self.channel = channel
        self.m = m

    def __call__(self, k: int, x: Array) -> Array:
        u = self.channel.latest()
        return np.zeros(self.m) if u is None else np.asarray(u, dtype=float)


class DiscountedGoal:
    """Goal-seeking command: discounted sum of squared distances between
    predicted positions and the target. Solver failure repeats the
    previous command."""

    def __init__(self, model: SystemModel, target, H: int, discount: float,
                 bounds: BoxSet):
        if H < 1:
            raise ValueError("H >= 1 required")
        if not 0.0 < discount < 1.0:
            raise ValueError("discount in (0, 1) required")
        self.model = model
        self.target = np.asarray(target, dtype=float)
        self.H = H
        self.discount = discount
        self.bounds = bounds
        self._prev = np.zeros(model.input_dim)
        self.failures = 0

    def __call__(self, k: int, x: Array) -> Array:
        try:
            u = discounted_goal_command(self.model, x, self.target, self.H,
                                        self.discount, self.bounds)
        except RuntimeError:
            self.failures += 1
            return self._prev.copy()
        self._prev = u
        return u.copy()


class Switched:
    """Composes two sources around a switch index; realizes the
    go-then-return command of the third case study."""

    def __init__(self, first, second, Ks: int):
        self.first = first
        self.second = second
        self.Ks = Ks

    def __call__(self, k: int, x: Array) -> Array:
        return self.first(k, x) if k < self.Ks else self.second(k, x)


def discounted_goal_command(model: SystemModel, x, target, H: int,
                            discount: float, bounds: BoxSet) -> Array:
    """First input of the H-step discounted goal-distance minimizer."""
    if model.kind != "unicycle":
        raise ValueError("goal command is defined for the unicycle model")
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    n, m = model.state_dim, model.input_dim

    def objective(w):
        us = w.reshape(H, m)
        xs = model.rollout(x, us)
        f = 0.0
        mu = np.zeros(n)
        grad = np.zeros(H * m)
        # backward sweep: mu carries the cost-to-go gradient
        for i in range(H, 0, -1):
            d = xs[i][:2] - target
            w_i = discount ** (i - 1)
            f += w_i * float(d @ d)
            mu += np.concatenate([2.0 * w_i * d, [0.0]])
            fx, fu = model.jacobians(xs[i - 1], us[i - 1])
            grad[(i - 1) * m:i * m] = fu.T @ mu
            mu = fx.T @ mu
        return f, grad

    p = NlpProblem(dim=H * m, objective=objective,
                   x0=np.zeros(H * m),
                   lb=np.tile(bounds.lower, H), ub=np.tile(bounds.upper, H))
    out = solve_nlp(p, tol=1e-8)
    if out.status.status not in (OPTIMAL, "max_iter"):
        raise RuntimeError(f"goal command solve failed: {out.status.status}")
    if out.status.status != OPTIMAL:
        # bounded objective on a box: accept only if the point is at
        # least as good as the zero command
        f_zero, _ = objective(np.zeros(H * m))
        f_out, _ = objective(out.z)
        if f_out > f_zero:
            raise RuntimeError("goal command solve stalled above zero input")
    return out.z[:m].copy()


def _margins(cfg: Ps2fConfig, x: Array, u: Array) -> Tuple[Array, Array]:
    return cfg.X.margins(x), cfg.U.margins(u)


def shifted_stack(cfg: Ps2fConfig, nominal: NominalSolution,
                  res: FilterResult, M: int) -> Array:
    """Warm-start candidate for the next step: the filtered stack minus
    its applied head, the nominal tail, and one terminal-controller
    action appended."""
    parts = [res.u_stack[1:M], nominal.v_star[M:cfg.N],
             terminal_action(cfg, nominal.z_star[cfg.N]).reshape(1, -1)]
    return np.vstack([p for p in parts if len(p)])


def run_closed_loop(cfg: Ps2fConfig, x0, source: Callable[[int, Array], Array],
                    schedule: ModeSchedule, steps: int,
                    assertions: bool = True) -> ClosedLoopLog:
    """Run the filtered loop for `steps` steps from x0."""
    n, m = cfg.model.state_dim, cfg.model.input_dim
    x = np.asarray(x0, dtype=float).copy()
    log = ClosedLoopLog(n=n, m=m)
    warm = None
    for k in range(steps):
        t0 = time.perf_counter()
        nominal = solve_nominal(cfg, x, warm=warm)
        t_nom = (time.perf_counter() - t0) * 1e3
        if not nominal.feasible:
            if k == 0:
                raise ValueError("x0 is outside the feasible region of the "
                                 "nominal problem")
            raise ClosedLoopAssertionError(
                f"nominal solve lost feasibility at step {k} "
                f"({nominal.status.status})", log)
        a_k = schedule.a_at(k)
        M_k = schedule.M_at(k)
        u_ext = np.asarray(source(k, x), dtype=float)
        t1 = time.perf_counter()
        res = apply_filter(cfg, x, u_ext, nominal, a_k, M_k)
        t_fil = (time.perf_counter() - t1) * 1e3
        stage = cfg.cost.stage(x, res.u_applied)
        mX, mU = _margins(cfg, x, res.u_applied)
        log.rows.append(LogRow(
            k=k, x=x.copy(), u_ext=u_ext.copy(), u=res.u_applied.copy(),
            V=nominal.value, a=a_k, M=M_k, stage_cost=stage,
            margins_X=mX, margins_U=mU,
            nominal_status=nominal.status.status,
            filter_status=res.status.status,
            used_fallback=res.used_fallback,
            t_nominal_ms=t_nom, t_filter_ms=t_fil,
        ))
        if assertions and log.rows[-1].min_margin() < -_MARGIN_TOL:
            raise ClosedLoopAssertionError(
                f"constraint margin {log.rows[-1].min_margin():.3e} at "
                f"step {k}", log)
        if assertions and len(log.rows) >= 2:
            prev = log.rows[-2]
            if prev.a < 1.0:
                slack = nominal.value - prev.V + (1.0 - prev.a) * prev.stage_cost
                if slack > _DECREASE_TOL:
                    raise ClosedLoopAssertionError(
                        f"value decrease violated at step {k}: slack "
                        f"{slack:.3e}", log)
        candidate = shifted_stack(cfg, nominal, res, M_k)
        x = cfg.model.step(x, res.u_applied)
        if assertions:
            _, _, viol = verify_sequences(cfg, x, candidate)
            if viol > _CANDIDATE_TOL:
                raise ClosedLoopAssertionError(
                    f"shifted candidate infeasible at step {k + 1}: "
                    f"violation {viol:.3e}", log)
        warm = candidate
    log.final_state = x.copy()
    tail = solve_nominal(cfg, x, warm=warm)
    if tail.feasible:
        log.final_value = tail.value
        if assertions and log.rows and log.rows[-1].a < 1.0:
            prev = log.rows[-1]
            slack = tail.value - prev.V + (1.0 - prev.a) * prev.stage_cost
            if slack > _DECREASE_TOL:
                raise ClosedLoopAssertionError(
                    f"value decrease violated at final step: slack "
                    f"{slack:.3e}", log)
    return log


def run_unfiltered(cfg: Ps2fConfig, x0, source: Callable[[int, Array], Array],
                   steps: int) -> ClosedLoopLog:
    """Apply raw commands with no nominal solve and no filtering;
    margins are logged, violations are allowed."""
    n, m = cfg.model.state_dim, cfg.model.input_dim
    x = np.asarray(x0, dtype=float).copy()
    log = ClosedLoopLog(n=n, m=m)
    for k in range(steps):
        u = np.asarray(source(k, x), dtype=float)
        mX, mU = _margins(cfg, x, u)
        log.rows.append(LogRow(
            k=k, x=x.copy(), u_ext=u.copy(), u=u.copy(),
            V=float("nan"), a=float("nan"), M=0,
            stage_cost=cfg.cost.stage(x, u),
            margins_X=mX, margins_U=mU,
            nominal_status="skipped", filter_status="unfiltered",
            used_fallback=False, t_nominal_ms=0.0, t_filter_ms=0.0,
        ))
        x = cfg.model.step(x, u)
    log.final_state = x.copy()
    return log


@dataclass
class SweepEntry:
    parameter: str
    value: float
    feasible: bool
    member_count: int
    boundary: List[Array]
    grid_values: Optional[Array]


def _rebuild(cfg: Ps2fConfig, parameter: str, value):
    if parameter == "a":
        return cfg, float(value), cfg.M
    if parameter == "M":
        return cfg, cfg.a, int(value)
    if parameter == "N":
        N = int(value)
        return cfg.replace(N=N, M=min(cfg.M, N)), cfg.a, min(cfg.M, N)
    if parameter == "Q":
        Q = float(value) * cfg.cost.Q
        r = solve_dare(cfg.model.A, cfg.model.B, Q, cfg.cost.R)
        gamma = max_ellipsoid_level(r.P, r.K, cfg.X, cfg.U)
        c2 = cfg.replace(
            cost=QuadraticCost(Q=Q, R=cfg.cost.R, P_f=r.P),
            Xf=TerminalSet(kind="ellipsoid", P=r.P, gamma=gamma))
        return c2, cfg.a, cfg.M
    raise ValueError(f"unknown sweep parameter: {parameter}")


def parameter_sweep_s2(cfg: Ps2fConfig, x,
                       sweep: Sequence[Tuple[str, Sequence[float]]],
                       grid_resolution: int = 201) -> List[SweepEntry]:
    """Sample the safe input set while varying one parameter at a time.

    For the a and M sweeps the sampled sets must be nested along
    increasing values; a violation raises. Infeasible nominal solves are
    recorded per value, not raised (expected at N = 1).
    """
    x = np.asarray(x, dtype=float)
    out: List[SweepEntry] = []
    for parameter, values in sweep:
        prev_members = None
        for value in sorted(values):
            c2, a, M = _rebuild(cfg, parameter, value)
            nominal = solve_nominal(c2, x)
            if not nominal.feasible:
                out.append(SweepEntry(parameter, float(value), False, 0,
                                      [], None))
                prev_members = None
                continue
            grid = sample_s2_set(c2, x, nominal, a, M,
                                 grid_resolution=grid_resolution)
            members = grid.values == 1
            if parameter in ("a", "M") and prev_members is not None:
                flips = prev_members & (grid.values == 0)
                if np.any(flips):
                    raise AssertionError(
                        f"{parameter}-sweep lost {int(np.sum(flips))} member "
                        f"cells between consecutive values near {value}")
            out.append(SweepEntry(parameter, float(value), True,
                                  int(np.sum(members)), grid.boundary,
                                  grid.values))
            prev_members = members
    return out
