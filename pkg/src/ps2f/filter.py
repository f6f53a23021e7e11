"""The filtering OCP and the input set it projects onto.

Given the nominal solution at x, the filter finds the input stack
closest to an external command in its first element, subject to the
rollout staying inside the constraints, a cumulative-cost budget
relative to the nominal segment, and exact terminal matching with the
nominal state z*(M). The set of first inputs of feasible stacks is what
gets sampled and rendered.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from ps2f.linear import build_lifted
from ps2f.nlp import NlpProblem, solve_nlp
from ps2f.nominal import NominalSolution, terminal_gain
from ps2f.qp import INFEASIBLE, OPTIMAL, QpProblem, SolveStatus, solve_qp
from ps2f.types import Ps2fConfig

Array = np.ndarray

_SLACK_TOL = 1e-6
_DEGENERATE_TOL = 1e-9
_MEMBER_TOL = 1e-9
_FEAS_TOL = 1e-8


@dataclass
class FilterResult:
    """Outcome of one filtering solve. u_applied is the input that goes
    to the plant; u_stack and x_traj are the certifying sequences."""

    u_applied: Array
    u_stack: Array
    x_traj: Array
    distortion: float
    status: SolveStatus
    used_fallback: bool
    performance_slack: float


def segment_cost(cfg: Ps2fConfig, z: Array, v: Array, M: int) -> float:
    """Cumulative stage cost of the first M steps of (z, v)."""
    return float(sum(cfg.cost.stage(z[i], v[i]) for i in range(M)))


def _result_from_stack(cfg, x, u_ext, nominal, a, M, u_stack, status,
                       used_fallback, x_traj=None) -> FilterResult:
    u_stack = np.asarray(u_stack, dtype=float).reshape(M, -1)
    if x_traj is None:
        x_traj = cfg.model.rollout(x, u_stack)
    slack = (segment_cost(cfg, x_traj, u_stack, M)
             - segment_cost(cfg, nominal.z_star, nominal.v_star, M)
             - a * cfg.cost.stage(x, u_stack[0]))
    d = u_ext - u_stack[0]
    return FilterResult(u_applied=u_stack[0].copy(), u_stack=u_stack,
                        x_traj=x_traj, distortion=float(d @ d),
                        status=status, used_fallback=used_fallback,
                        performance_slack=float(slack))


def _linear_data(cfg: Ps2fConfig, x: Array, nominal: NominalSolution,
                 a: float, M: int):
    """Stacked quadratic data of the filter problem for linear models."""
    A, B = cfg.model.A, cfg.model.B
    n, m = B.shape
    lifted = build_lifted(A, B, cfg.cost.Q, cfg.cost.R, cfg.cost.P_f,
                          terminal_gain(cfg), M, a)
    Phi, Gamma = lifted.Phi, lifted.Gamma
    L_nom = segment_cost(cfg, nominal.z_star, nominal.v_star, M)
    PhiQPhi = Phi.T @ lifted.Qtilde @ Phi
    q_const = float(x @ PhiQPhi @ x - a * x @ cfg.cost.Q @ x) - L_nom
    q_lin = 2.0 * (lifted.F.T @ x)
    # state boxes for i = 1..M-1; x(M) is pinned to z*(M) by the equality
    rows, rhs = [], []
    for i in range(1, M):
        Gi = Gamma[i * n:(i + 1) * n]
        ci = Phi[i * n:(i + 1) * n] @ x
        rows.append(Gi)
        rhs.append(cfg.X.upper - ci)
        rows.append(-Gi)
        rhs.append(ci - cfg.X.lower)
    A_state = (np.vstack(rows) if rows else np.zeros((0, M * m)))
    b_state = (np.concatenate(rhs) if rhs else np.zeros(0))
    Aeq = Gamma[M * n:]
    beq = nominal.z_star[M] - Phi[M * n:] @ x
    return lifted, A_state, b_state, Aeq, beq, q_lin, q_const


def _q_of(lifted, q_lin, q_const, U):
    return float(U @ lifted.H @ U + q_lin @ U + q_const)


def _phase1_linear(cfg, lifted, A_state, b_state, Aeq, beq, q_lin, q_const,
                   M, U0):
    """Minimize the performance quadratic over the linear constraint set.

    Convex exactly when a < 1; callers only take this branch then.
    """
    H = lifted.H + lifted.H.T
    qp = solve_qp(QpProblem(H=H, g=q_lin, Aeq=Aeq, beq=beq,
                            Aineq=A_state if len(b_state) else None,
                            bineq=b_state if len(b_state) else None,
                            lb=np.tile(cfg.U.lower, M),
                            ub=np.tile(cfg.U.upper, M)),
                  tol=1e-10, x0=U0)
    return qp


def _filter_linear(cfg, x, u_ext, nominal, a, M, U0) -> FilterResult:
    m = cfg.model.input_dim
    lifted, A_state, b_state, Aeq, beq, q_lin, q_const = _linear_data(
        cfg, x, nominal, a, M)
    s0 = _q_of(lifted, q_lin, q_const, U0)

    if a < 1.0 and s0 > -_DEGENERATE_TOL:
        # the cost budget admits at most a thin slice around the nominal
        # segment; its unique closest point is the phase-one minimizer
        qp = _phase1_linear(cfg, lifted, A_state, b_state, Aeq, beq,
                            q_lin, q_const, M, U0)
        if qp.status.status == OPTIMAL:
            return _result_from_stack(cfg, x, u_ext, nominal, a, M,
                                      qp.z.reshape(M, m), qp.status, False)
        return _result_from_stack(cfg, x, u_ext, nominal, a, M,
                                  U0.reshape(M, m), qp.status, True)

    e1 = lifted.e1
    Hq = lifted.H + lifted.H.T

    def objective(U):
        d = e1 @ U - u_ext
        return float(d @ d), 2.0 * e1.T @ d

    def ineq(U):
        q = _q_of(lifted, q_lin, q_const, U)
        Jq = Hq @ U + q_lin
        if len(b_state):
            return (np.concatenate([A_state @ U - b_state, [q]]),
                    np.vstack([A_state, Jq]))
        return np.array([q]), Jq.reshape(1, -1)

    def eq(U):
        return Aeq @ U - beq, Aeq

    def lag_hess(U, lam, mu):
        return 2.0 * e1.T @ e1 + mu[-1] * Hq

    p = NlpProblem(dim=M * m, objective=objective, eq=eq, ineq=ineq,
                   x0=U0, lb=np.tile(cfg.U.lower, M),
                   ub=np.tile(cfg.U.upper, M), lag_hess=lag_hess,
                   hess_floor=True)
    out = solve_nlp(p, tol=1e-9)
    res = _result_from_stack(cfg, x, u_ext, nominal, a, M,
                             out.z.reshape(M, m), out.status, False)
    if (out.status.status == OPTIMAL and res.performance_slack <= _SLACK_TOL
            and _stack_ok(cfg, res, nominal, M)):
        return res
    fb = _result_from_stack(cfg, x, u_ext, nominal, a, M,
                            U0.reshape(M, m), out.status, True)
    if res.performance_slack <= _SLACK_TOL and _stack_ok(cfg, res, nominal, M) \
            and res.distortion <= fb.distortion:
        return res
    return fb


def _stack_ok(cfg, res: FilterResult, nominal: NominalSolution, M: int) -> bool:
    if np.max(np.abs(res.x_traj[M] - nominal.z_star[M])) > _SLACK_TOL:
        return False
    for i in range(M):
        if not cfg.X.contains(res.x_traj[i], tol=_FEAS_TOL):
            return False
        if not cfg.U.contains(res.u_stack[i], tol=_FEAS_TOL):
            return False
    return True


def _shooting_filter_problem(cfg, x, nominal, a, M, u0_pin: Optional[Array],
                             feasibility_objective: bool, u_ext=None):
    """Multiple-shooting filter problem. With u0_pin the first input is
    fixed and dropped from the decision vector; with
    feasibility_objective the performance term becomes the objective
    instead of a constraint."""
    model = cfg.model
    n, m = model.state_dim, model.input_dim
    nu = M if u0_pin is None else M - 1
    dim = M * n + nu * m

    def xs_of(w):
        return w[:M * n].reshape(M, n)

    def us_of(w):
        tail = w[M * n:].reshape(nu, m)
        if u0_pin is None:
            return tail
        return np.vstack([u0_pin, tail]) if nu else u0_pin.reshape(1, m)

    def ucol(i):
        # decision columns of u(i); None when pinned
        j = i if u0_pin is None else i - 1
        return None if j < 0 else slice(M * n + j * m, M * n + (j + 1) * m)

    def xcol(i):
        return slice((i - 1) * n, i * n)

    L_nom = segment_cost(cfg, nominal.z_star, nominal.v_star, M)

    def perf(w):
        xs, us = xs_of(w), us_of(w)
        grad = np.zeros(dim)
        q = cfg.cost.stage(x, us[0]) - a * cfg.cost.stage(x, us[0]) - L_nom
        if ucol(0) is not None:
            grad[ucol(0)] = 2.0 * (1.0 - a) * cfg.cost.R @ us[0]
        for i in range(1, M):
            q += cfg.cost.stage(xs[i - 1], us[i])
            grad[xcol(i)] = 2.0 * cfg.cost.Q @ xs[i - 1]
            grad[ucol(i)] = 2.0 * cfg.cost.R @ us[i]
        return q, grad

    n_eq = M * n + n

    def eq(w):
        xs, us = xs_of(w), us_of(w)
        h = np.zeros(n_eq)
        J = np.zeros((n_eq, dim))
        prev = x
        for i in range(M):
            fx, fu = model.jacobians(prev, us[i])
            h[i * n:(i + 1) * n] = xs[i] - model.step(prev, us[i])
            J[i * n:(i + 1) * n, xcol(i + 1)] = np.eye(n)
            if i >= 1:
                J[i * n:(i + 1) * n, xcol(i)] = -fx
            if ucol(i) is not None:
                J[i * n:(i + 1) * n, ucol(i)] = -fu
            prev = xs[i]
        h[M * n:] = xs[M - 1] - nominal.z_star[M]
        J[M * n:, xcol(M)] = np.eye(n)
        return h, J

    if feasibility_objective:
        objective = perf
        ineq = None
    else:
        def objective(w):
            us = us_of(w)
            d = us[0] - u_ext
            grad = np.zeros(dim)
            if ucol(0) is not None:
                grad[ucol(0)] = 2.0 * d
            return float(d @ d), grad

        def ineq(w):
            q, gq = perf(w)
            return np.array([q]), gq.reshape(1, dim)

    lag_hess = None
    if model.kind == "unicycle":
        Ts = model.Ts

        def lag_hess(w, lam, mu):
            xs, us = xs_of(w), us_of(w)
            Hl = np.zeros((dim, dim))
            w_perf = mu[-1] if (not feasibility_objective and len(mu)) else 0.0
            if feasibility_objective:
                w_perf = 1.0
            for i in range(1, M):
                Hl[xcol(i), xcol(i)] = 2.0 * w_perf * cfg.cost.Q
            for i in range(M):
                ci = ucol(i)
                if ci is None:
                    continue
                scale = (1.0 - a) if i == 0 else 1.0
                Hl[ci, ci] = 2.0 * w_perf * scale * cfg.cost.R
                if i == 0 and not feasibility_objective:
                    Hl[ci, ci] += 2.0 * np.eye(m)
            for i in range(1, M):
                l1, l2 = lam[i * n], lam[i * n + 1]
                th = xs[i - 1][2]
                sp = us[i][0]
                it = (i - 1) * n + 2
                Hl[it, it] += Ts * sp * (l1 * np.cos(th) + l2 * np.sin(th))
                ci = ucol(i)
                if ci is not None:
                    iv = ci.start
                    cross = Ts * (l1 * np.sin(th) - l2 * np.cos(th))
                    Hl[it, iv] += cross
                    Hl[iv, it] += cross
            return Hl

    # boxes on x(1..M-1); x(M) is pinned to z*(M), give it slack so the
    # equality cannot collide with a boundary-tight nominal state
    lb_x = np.tile(cfg.X.lower, M).astype(float)
    ub_x = np.tile(cfg.X.upper, M).astype(float)
    lb_x[(M - 1) * n:] -= 1e-6
    ub_x[(M - 1) * n:] += 1e-6
    lb = np.concatenate([lb_x, np.tile(cfg.U.lower, nu)])
    ub = np.concatenate([ub_x, np.tile(cfg.U.upper, nu)])
    return NlpProblem(dim=dim, objective=objective, eq=eq, ineq=ineq,
                      lb=lb, ub=ub, lag_hess=lag_hess,
                      hess_floor=not feasibility_objective), us_of, xs_of


def _pack_filter(cfg, x, u_stack, M, u0_pinned: bool):
    traj = cfg.model.rollout(x, u_stack)
    xs = np.array([cfg.X.clip(zi) for zi in traj[1:]])
    tail = u_stack[1:] if u0_pinned else u_stack
    return np.concatenate([xs.ravel(), np.asarray(tail).ravel()])


def _filter_shooting(cfg, x, u_ext, nominal, a, M, U0) -> FilterResult:
    u0_stack = U0.reshape(M, -1)
    s0 = -a * cfg.cost.stage(x, nominal.v_star[0])
    if a < 1.0 and s0 > -_DEGENERATE_TOL:
        p, us_of, _ = _shooting_filter_problem(
            cfg, x, nominal, a, M, None, True)
        out = solve_nlp(replace(p, x0=_pack_filter(cfg, x, u0_stack, M, False)),
                        tol=1e-9)
        # certificates run on the rollout of the stack; the shooting
        # variables obey the boxes by construction while the applied
        # inputs may not
        res = _result_from_stack(cfg, x, u_ext, nominal, a, M, us_of(out.z),
                                 out.status, False)
        if res.performance_slack <= _SLACK_TOL and _stack_ok(cfg, res, nominal, M):
            return res
        return _result_from_stack(cfg, x, u_ext, nominal, a, M, u0_stack,
                                  out.status, True)

    p, us_of, _ = _shooting_filter_problem(
        cfg, x, nominal, a, M, None, False, u_ext=u_ext)
    blend = np.clip(0.5 * (nominal.v_star[0] + cfg.U.clip(u_ext)),
                    cfg.U.lower, cfg.U.upper)
    inits = [u0_stack,
             np.vstack([blend, u0_stack[1:]]) if M > 1
             else blend.reshape(1, -1)]
    best = None
    status = None
    for stack0 in inits:
        out = solve_nlp(replace(p, x0=_pack_filter(cfg, x, stack0, M, False)),
                        tol=1e-8)
        status = out.status
        res = _result_from_stack(cfg, x, u_ext, nominal, a, M, us_of(out.z),
                                 out.status, False)
        if res.performance_slack <= _SLACK_TOL and _stack_ok(cfg, res, nominal, M):
            if best is None or res.distortion < best.distortion:
                best = res
            if out.status.status == OPTIMAL:
                break
    if best is not None:
        return best
    return _result_from_stack(cfg, x, u_ext, nominal, a, M, u0_stack,
                              status, True)


def filter(cfg: Ps2fConfig, x, u_ext, nominal: NominalSolution,
           a: float, M: int) -> FilterResult:
    """Project the external command onto the set of safe first inputs.

    Requires nominal.status optimal; the truncated nominal segment is
    then feasible by construction and doubles as the fallback whenever
    the solve fails numerically.
    """
    if not nominal.feasible:
        raise ValueError("filter needs a feasible nominal solution")
    if not 1 <= M <= cfg.N:
        raise ValueError("M must lie in [1, N]")
    if a < 0:
        raise ValueError("a must be nonnegative")
    x = np.asarray(x, dtype=float)
    u_ext = np.asarray(u_ext, dtype=float)
    U0 = nominal.v_star[:M].ravel().copy()

    trunc = _result_from_stack(cfg, x, u_ext, nominal, a, M,
                               nominal.v_star[:M],
                               SolveStatus(OPTIMAL, 0.0, 0), False)
    if trunc.performance_slack > _SLACK_TOL or not _stack_ok(cfg, trunc, nominal, M):
        raise AssertionError(
            "truncated nominal segment is not feasible for the filter; "
            "the nominal solution violates its own certificate")

    if cfg.model.kind == "linear":
        res = _filter_linear(cfg, x, u_ext, nominal, a, M, U0)
    else:
        res = _filter_shooting(cfg, x, u_ext, nominal, a, M, U0)
    # the projection can never beat the command itself; it also can never
    # be worse than the feasible fallback stack
    if not res.used_fallback and res.distortion > trunc.distortion + 1e-12:
        better = trunc
        better.status = res.status
        return better
    return res


def s2_membership(cfg: Ps2fConfig, x, u0, nominal: NominalSolution,
                  a: float, M: int) -> Optional[bool]:
    """Tri-state membership of u0 in the safe input set at x.

    True/False when the feasibility problem resolves; None when the
    solver cannot certify either way (only possible on nonlinear
    models).
    """
    if not nominal.feasible:
        raise ValueError("membership needs a feasible nominal solution")
    x = np.asarray(x, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    if not cfg.U.contains(u0, tol=_FEAS_TOL):
        return False
    if cfg.model.kind == "linear":
        return _membership_linear(cfg, x, u0, nominal, a, M)
    return _membership_shooting(cfg, x, u0, nominal, a, M)


def _membership_linear(cfg, x, u0, nominal, a, M) -> bool:
    n, m = cfg.model.B.shape
    lifted, A_state, b_state, Aeq, beq, q_lin, q_const = _linear_data(
        cfg, x, nominal, a, M)
    # pin u(0) = u0 and minimize the performance quadratic over the tail;
    # with the first block fixed the quadratic is convex for every a >= 0
    d = M * m
    if M == 1:
        resid = float(np.max(np.abs(Aeq @ u0 - beq)))
        if resid > _SLACK_TOL:
            return False
        return _q_of(lifted, q_lin, q_const, u0) <= _MEMBER_TOL
    T = np.zeros((d, (M - 1) * m))
    T[m:, :] = np.eye((M - 1) * m)
    base = np.concatenate([u0, np.zeros((M - 1) * m)])
    Ht = T.T @ (lifted.H + lifted.H.T) @ T
    gt = T.T @ ((lifted.H + lifted.H.T) @ base + q_lin)
    c0 = _q_of(lifted, q_lin, q_const, base)
    rows = A_state @ T
    rhs = b_state - A_state @ base
    qp = solve_qp(QpProblem(H=Ht, g=gt,
                            Aeq=Aeq @ T, beq=beq - Aeq @ base,
                            Aineq=rows if len(rhs) else None,
                            bineq=rhs if len(rhs) else None,
                            lb=np.tile(cfg.U.lower, M - 1),
                            ub=np.tile(cfg.U.upper, M - 1)),
                  tol=1e-10, x0=nominal.v_star[1:M].ravel())
    if qp.status.status != OPTIMAL:
        return False
    q_min = c0 + float(0.5 * qp.z @ Ht @ qp.z + gt @ qp.z)
    return q_min <= _MEMBER_TOL


def _membership_shooting(cfg, x, u0, nominal, a, M) -> Optional[bool]:
    if M == 1:
        # single step, nothing left to optimize
        x1 = cfg.model.step(x, u0)
        if np.max(np.abs(x1 - nominal.z_star[1])) > _SLACK_TOL:
            return False
        q = (cfg.cost.stage(x, u0)
             - cfg.cost.stage(nominal.z_star[0], nominal.v_star[0])
             - a * cfg.cost.stage(x, u0))
        return bool(q <= _SLACK_TOL)
    p, us_of, xs_of = _shooting_filter_problem(
        cfg, x, nominal, a, M, u0, True)
    stack0 = np.vstack([u0, nominal.v_star[1:M]])
    out = solve_nlp(replace(p, x0=_pack_filter(cfg, x, stack0, M, True)),
                    tol=1e-8)
    if out.status.status == INFEASIBLE:
        return False
    if out.status.status != OPTIMAL:
        return None
    xs = np.vstack([x, xs_of(out.z)])
    us = us_of(out.z)
    q = (segment_cost(cfg, xs, us, M)
         - segment_cost(cfg, nominal.z_star, nominal.v_star, M)
         - a * cfg.cost.stage(x, us[0]))
    return bool(q <= _SLACK_TOL)


@dataclass
class S2Grid:
    """Membership samples over the input box: values[i, j] is the
    tri-state result at (u1_axis[i], u2_axis[j]); 1 member, 0 not,
    -1 indeterminate."""

    u1_axis: Array
    u2_axis: Array
    values: Array
    boundary: List[Array]

    def member_fraction(self) -> float:
        return float(np.mean(self.values == 1))

    def indeterminate_fraction(self) -> float:
        return float(np.mean(self.values == -1))


def sample_s2_set(cfg: Ps2fConfig, x, nominal: NominalSolution, a: float,
                  M: int, grid_resolution: int = 201) -> S2Grid:
    """Evaluate membership on an axis-aligned grid covering U and trace
    the boundary of the member region. Two-input systems only."""
    if cfg.model.input_dim != 2:
        raise ValueError("set sampling is defined for two-input systems")
    u1 = np.linspace(cfg.U.lower[0], cfg.U.upper[0], grid_resolution)
    u2 = np.linspace(cfg.U.lower[1], cfg.U.upper[1], grid_resolution)
    vals = np.zeros((grid_resolution, grid_resolution), dtype=np.int8)
    for i, a1 in enumerate(u1):
        for j, a2 in enumerate(u2):
            r = s2_membership(cfg, x, np.array([a1, a2]), nominal, a, M)
            vals[i, j] = 1 if r is True else (0 if r is False else -1)
    return S2Grid(u1_axis=u1, u2_axis=u2, values=vals,
                  boundary=boundary_polylines(u1, u2, vals))


def boundary_polylines(u1: Array, u2: Array, vals: Array) -> List[Array]:
    """Marching-squares boundary of the member region (value 1), with
    indeterminate cells treated as outside. Returns polylines as arrays
    of (u1, u2) vertices."""
    inside = vals == 1
    segs = []
    for i in range(len(u1) - 1):
        for j in range(len(u2) - 1):
            corners = (inside[i, j], inside[i + 1, j],
                       inside[i + 1, j + 1], inside[i, j + 1])
            code = (corners[0] | corners[1] << 1
                    | corners[2] << 2 | corners[3] << 3)
            if code in (0, 15):
                continue
            xm, xp = u1[i], u1[i + 1]
            ym, yp = u2[j], u2[j + 1]
            cx, cy = 0.5 * (xm + xp), 0.5 * (ym + yp)
            b = (cx, ym)   # edge between (i,j) and (i+1,j)
            r = (xp, cy)   # edge between (i+1,j) and (i+1,j+1)
            t = (cx, yp)   # edge between (i,j+1) and (i+1,j+1)
            le = (xm, cy)  # edge between (i,j) and (i,j+1)
            table = {
                1: [(le, b)], 2: [(b, r)], 3: [(le, r)], 4: [(r, t)],
                5: [(le, b), (r, t)], 6: [(b, t)], 7: [(le, t)],
                8: [(t, le)], 9: [(b, t)], 10: [(b, le), (t, r)],
                11: [(t, r)], 12: [(r, le)], 13: [(b, r)], 14: [(le, b)],
            }
            segs.extend(table[code])
    return _chain_segments(segs)


def _chain_segments(segs) -> List[Array]:
    """Join shared-endpoint segments into polylines."""
    if not segs:
        return []
    def key(pt):
        return (round(pt[0], 9), round(pt[1], 9))
    remaining = {idx: s for idx, s in enumerate(segs)}
    by_end = {}
    for idx, (p, q) in remaining.items():
        by_end.setdefault(key(p), []).append(idx)
        by_end.setdefault(key(q), []).append(idx)
    lines = []
    while remaining:
        idx, (p, q) = next(iter(remaining.items()))
        del remaining[idx]
        chain = [p, q]
        for endsel in (True, False):
            while True:
                tip = chain[-1] if endsel else chain[0]
                cands = [j for j in by_end.get(key(tip), [])
                         if j in remaining]
                if not cands:
                    break
                j = cands[0]
                a, b = remaining.pop(j)
                nxt = b if key(a) == key(tip) else a
                if endsel:
                    chain.append(nxt)
                else:
                    chain.insert(0, nxt)
        lines.append(np.asarray(chain, dtype=float))
    return lines
