"""The nominal MPC problem P_N(x) and its solver.

Linear models are condensed to an input-only problem (states eliminated
through the prediction matrices); the unicycle uses multiple shooting
with states and inputs as decision variables and the dynamics as
equality constraints. Both paths go through the SQP backend.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from ps2f.linear import stack_dynamics
from ps2f.nlp import NlpProblem, solve_nlp
from ps2f.qp import INFEASIBLE, OPTIMAL, SolveStatus
from ps2f.types import Ps2fConfig

Array = np.ndarray

_FEAS_TOL = 1e-8
_LINEAR_TOL = 1e-9
_SHOOTING_TOL = 1e-9


@dataclass
class NominalSolution:
    """Optimal sequences of P_N(x): inputs v_star (N, m), states z_star
    (N+1, n) with z_star[0] = x, the value V_N(x), and solver status."""

    v_star: Array
    z_star: Array
    value: float
    status: SolveStatus

    @property
    def feasible(self) -> bool:
        """A finite value is only ever reported for sequences that passed
        verification; near-singular points can carry a non-optimal status
        while the sequences themselves remain perfectly usable."""
        return bool(np.isfinite(self.value))


def terminal_gain(cfg: Ps2fConfig) -> Optional[Array]:
    """Gain of the terminal controller u = -Kx for linear models with a
    Riccati-consistent terminal weight; None otherwise."""
    if cfg.model.kind != "linear":
        return None
    A, B = cfg.model.A, cfg.model.B
    Pf = cfg.cost.P_f
    return np.linalg.solve(cfg.cost.R + B.T @ Pf @ B, B.T @ Pf @ A)


def terminal_action(cfg: Ps2fConfig, z_end: Array) -> Array:
    """Action of the terminal controller at z_end: -K z_end inside the
    ellipsoid, zero for the origin terminal set."""
    if cfg.Xf.kind == "ellipsoid" and cfg.model.kind == "linear":
        return -terminal_gain(cfg) @ z_end
    return np.zeros(cfg.model.input_dim)


def shifted_candidate(cfg: Ps2fConfig, sol: NominalSolution) -> Array:
    """Input sequence for the successor state f(x, v*(0)): drop the first
    input and append the terminal-controller action. Feasible whenever
    sol was, which is what makes warm starts and the value-decrease
    argument executable."""
    tail = sol.v_star[1:]
    return np.vstack([tail, terminal_action(cfg, sol.z_star[-1])])


def sequence_value(cfg: Ps2fConfig, z: Array, v: Array) -> float:
    """Objective of P_N along explicit sequences."""
    total = 0.0
    for i in range(v.shape[0]):
        total += cfg.cost.stage(z[i], v[i])
    return total + cfg.cost.terminal(z[-1])


def verify_sequences(cfg: Ps2fConfig, x: Array, v: Array,
                     z: Optional[Array] = None) -> Tuple[Array, float, float]:
    """Rollout (or defect) check of a candidate input sequence.

    Returns (states, value, violation) where violation is the largest
    constraint/dynamics breach. When z is given the defects of the
    shooting variables are part of the violation; otherwise states come
    from an exact rollout.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    viol = 0.0
    if z is None:
        z = cfg.model.rollout(x, v)
    else:
        z = np.asarray(z, dtype=float)
        viol = max(viol, float(np.max(np.abs(z[0] - x))))
        for i in range(v.shape[0]):
            defect = z[i + 1] - cfg.model.step(z[i], v[i])
            viol = max(viol, float(np.max(np.abs(defect))))
    for i in range(z.shape[0]):
        m = cfg.X.margins(z[i])
        viol = max(viol, float(-np.min(m)))
    for i in range(v.shape[0]):
        m = cfg.U.margins(v[i])
        viol = max(viol, float(-np.min(m)))
    zN = z[-1]
    if cfg.Xf.kind == "ellipsoid":
        viol = max(viol, float(zN @ cfg.Xf.P @ zN - cfg.Xf.gamma))
    elif cfg.Xf.kind == "origin":
        viol = max(viol, float(np.max(np.abs(zN))))
    return z, sequence_value(cfg, z, v), viol


def _failed(status: str) -> SolveStatus:
    return SolveStatus(status=status, kkt_residual=np.inf, iterations=0)


def _solve_linear(cfg: Ps2fConfig, x: Array, inits) -> NominalSolution:
    A, B = cfg.model.A, cfg.model.B
    n, m = B.shape
    N = cfg.N
    Phi, Gamma = stack_dynamics(A, B, N)
    Qhat = np.zeros(((N + 1) * n, (N + 1) * n))
    for i in range(N):
        Qhat[i * n:(i + 1) * n, i * n:(i + 1) * n] = cfg.cost.Q
    Qhat[N * n:, N * n:] = cfg.cost.P_f
    Rhat = np.kron(np.eye(N), cfg.cost.R)
    H = 2.0 * (Gamma.T @ Qhat @ Gamma + Rhat)
    H = 0.5 * (H + H.T)
    g = 2.0 * Gamma.T @ Qhat @ Phi @ x
    const = float(x @ Phi.T @ Qhat @ Phi @ x)

    def objective(v):
        return 0.5 * float(v @ H @ v) + float(g @ v) + const, H @ v + g

    # state boxes for i = 1..N as rows in the stacked input
    rows, rhs = [], []
    lo, hi = cfg.X.lower, cfg.X.upper
    for i in range(1, N + 1):
        Gi = Gamma[i * n:(i + 1) * n]
        ci = Phi[i * n:(i + 1) * n] @ x
        rows.append(Gi)
        rhs.append(hi - ci)
        rows.append(-Gi)
        rhs.append(ci - lo)
    A_state = np.vstack(rows)
    b_state = np.concatenate(rhs)

    GN = Gamma[N * n:]
    cN = Phi[N * n:] @ x
    eq = None
    if cfg.Xf.kind == "origin":
        def eq(v):
            return GN @ v + cN, GN

    if cfg.Xf.kind == "ellipsoid":
        P, gamma = cfg.Xf.P, cfg.Xf.gamma

        def ineq(v):
            zN = cN + GN @ v
            c_lin = A_state @ v - b_state
            c_term = float(zN @ P @ zN) - gamma
            J = np.vstack([A_state, 2.0 * (P @ zN) @ GN])
            return np.concatenate([c_lin, [c_term]]), J

        def lag_hess(v, lam, mu):
            return H + 2.0 * mu[-1] * GN.T @ P @ GN
    else:
        def ineq(v):
            return A_state @ v - b_state, A_state

        def lag_hess(v, lam, mu):
            return H

    lb = np.tile(cfg.U.lower, N)
    ub = np.tile(cfg.U.upper, N)
    best = None
    for v0 in inits:
        p = NlpProblem(dim=N * m, objective=objective, eq=eq, ineq=ineq,
                       x0=v0.ravel(), lb=lb, ub=ub, lag_hess=lag_hess)
        out = solve_nlp(p, tol=_LINEAR_TOL)
        v = out.z.reshape(N, m)
        z, value, viol = verify_sequences(cfg, x, v)
        if viol <= _FEAS_TOL:
            cand = NominalSolution(v_star=v, z_star=z, value=value,
                                   status=out.status)
            if best is None or value < best.value:
                best = cand
            if out.status.status == OPTIMAL:
                break
    if best is None:
        return NominalSolution(v_star=np.zeros((N, m)),
                               z_star=np.zeros((N + 1, n)),
                               value=np.inf, status=_failed(INFEASIBLE))
    return best


def _shooting_problem(cfg: Ps2fConfig, x: Array) -> Tuple[NlpProblem, int, int]:
    model = cfg.model
    n, m = model.state_dim, model.input_dim
    N = cfg.N
    dim = N * n + N * m

    def zsl(i):
        # columns of z(i), i = 1..N
        return slice((i - 1) * n, i * n)

    def vsl(i):
        return slice(N * n + i * m, N * n + (i + 1) * m)

    def split(w):
        return w[:N * n].reshape(N, n), w[N * n:].reshape(N, m)

    def objective(w):
        zs, vs = split(w)
        grad = np.zeros(dim)
        f = cfg.cost.stage(x, vs[0])
        grad[vsl(0)] = 2.0 * cfg.cost.R @ vs[0]
        for i in range(1, N):
            f += cfg.cost.stage(zs[i - 1], vs[i])
            grad[zsl(i)] = 2.0 * cfg.cost.Q @ zs[i - 1]
            grad[vsl(i)] = 2.0 * cfg.cost.R @ vs[i]
        f += cfg.cost.terminal(zs[N - 1])
        grad[zsl(N)] += 2.0 * cfg.cost.P_f @ zs[N - 1]
        return f, grad

    n_eq = N * n + (n if cfg.Xf.kind == "origin" else 0)

    def eq(w):
        zs, vs = split(w)
        h = np.zeros(n_eq)
        J = np.zeros((n_eq, dim))
        prev = x
        for i in range(N):
            fx, fu = model.jacobians(prev, vs[i])
            h[i * n:(i + 1) * n] = zs[i] - model.step(prev, vs[i])
            J[i * n:(i + 1) * n, zsl(i + 1)] = np.eye(n)
            if i >= 1:
                J[i * n:(i + 1) * n, zsl(i)] = -fx
            J[i * n:(i + 1) * n, vsl(i)] = -fu
            prev = zs[i]
        if cfg.Xf.kind == "origin":
            h[N * n:] = zs[N - 1]
            J[N * n:, zsl(N)] = np.eye(n)
        return h, J

    ineq = None
    if cfg.Xf.kind == "ellipsoid":
        P, gamma = cfg.Xf.P, cfg.Xf.gamma

        def ineq(w):
            zs, _ = split(w)
            zN = zs[N - 1]
            J = np.zeros((1, dim))
            J[0, zsl(N)] = 2.0 * P @ zN
            return np.array([float(zN @ P @ zN) - gamma]), J

    lag_hess = None
    if model.kind == "unicycle":
        Ts = model.Ts

        def lag_hess(w, lam, mu):
            zs, vs = split(w)
            Hl = np.zeros((dim, dim))
            for i in range(1, N):
                Hl[zsl(i), zsl(i)] = 2.0 * cfg.cost.Q
            Hl[zsl(N), zsl(N)] = 2.0 * cfg.cost.P_f
            for i in range(N):
                Hl[vsl(i), vsl(i)] = 2.0 * cfg.cost.R
            # curvature of the dynamics rows (z(i) free only for i >= 1)
            for i in range(1, N):
                l1, l2 = lam[i * n], lam[i * n + 1]
                th = zs[i - 1][2]
                sp = vs[i][0]
                it = (i - 1) * n + 2
                iv = N * n + i * m
                Hl[it, it] += Ts * sp * (l1 * np.cos(th) + l2 * np.sin(th))
                cross = Ts * (l1 * np.sin(th) - l2 * np.cos(th))
                Hl[it, iv] += cross
                Hl[iv, it] += cross
            if cfg.Xf.kind == "ellipsoid" and len(mu):
                Hl[zsl(N), zsl(N)] += 2.0 * mu[-1] * cfg.Xf.P
            return Hl

    lb = np.concatenate([np.tile(cfg.X.lower, N), np.tile(cfg.U.lower, N)])
    ub = np.concatenate([np.tile(cfg.X.upper, N), np.tile(cfg.U.upper, N)])
    p = NlpProblem(dim=dim, objective=objective, eq=eq, ineq=ineq,
                   lb=lb, ub=ub, lag_hess=lag_hess)
    return p, n, m


def _pack_shooting(cfg: Ps2fConfig, x: Array, v: Array) -> Array:
    z = cfg.model.rollout(x, v)
    zc = np.array([cfg.X.clip(zi) for zi in z[1:]])
    return np.concatenate([zc.ravel(), v.ravel()])


def _solve_shooting(cfg: Ps2fConfig, x: Array, inits,
                    good_enough: Optional[float] = None) -> NominalSolution:
    base, n, m = _shooting_problem(cfg, x)
    N = cfg.N
    best = None
    for w0 in inits:
        p = NlpProblem(dim=base.dim, objective=base.objective, eq=base.eq,
                       ineq=base.ineq, x0=w0, lb=base.lb, ub=base.ub,
                       lag_hess=base.lag_hess)
        out = solve_nlp(p, tol=_SHOOTING_TOL)
        v = out.z[N * n:].reshape(N, m)
        # certify the rollout, not the shooting variables: the plant sees
        # the inputs, and defects that park a bound-riding state outside X
        # must reject the solution here
        zs, value, viol = verify_sequences(cfg, x, v)
        if viol <= _FEAS_TOL:
            cand = NominalSolution(v_star=v, z_star=zs, value=value,
                                   status=out.status)
            if best is None or value < best.value:
                best = cand
            if out.status.status == OPTIMAL:
                break
            # a warm candidate bounds the optimum; once that bound is
            # met there is nothing left for the colder starts to add
            if good_enough is not None and value <= good_enough:
                break
    if best is None:
        return NominalSolution(v_star=np.zeros((N, m)),
                               z_star=np.zeros((N + 1, n)),
                               value=np.inf, status=_failed(INFEASIBLE))
    return best


def solve_nominal(cfg: Ps2fConfig, x,
                  warm: Union[NominalSolution, Array, None] = None
                  ) -> NominalSolution:
    """Solve P_N(x).

    warm may be the previous step's NominalSolution (shifted internally)
    or an explicit candidate input sequence of shape (N, m) already
    expressed at x. status is infeasible exactly when x lies outside the
    feasible region X_N.
    """
    x = np.asarray(x, dtype=float)
    n, m = cfg.model.state_dim, cfg.model.input_dim
    N = cfg.N
    if not cfg.X.contains(x, tol=_FEAS_TOL):
        return NominalSolution(v_star=np.zeros((N, m)),
                               z_star=np.zeros((N + 1, n)),
                               value=np.inf, status=_failed(INFEASIBLE))

    candidate = None
    cand_value = None
    if warm is not None:
        v_warm = (shifted_candidate(cfg, warm)
                  if isinstance(warm, NominalSolution)
                  else np.asarray(warm, dtype=float).reshape(N, m))
        _, v_val, viol = verify_sequences(cfg, x, v_warm)
        if viol <= 1e-6:
            candidate = v_warm
            cand_value = v_val

    if cfg.model.kind == "linear":
        inits = []
        if candidate is not None:
            inits.append(candidate)
        inits.append(np.zeros((N, m)))
        sol = _solve_linear(cfg, x, inits)
    else:
        inits = []
        if candidate is not None:
            inits.append(_pack_shooting(cfg, x, candidate))
            if isinstance(warm, NominalSolution) and cfg.Xf.kind == "origin":
                # plain shift with the last input repeated, as a guess only
                v_rep = np.vstack([warm.v_star[1:], warm.v_star[-1:]])
                inits.append(_pack_shooting(cfg, x, v_rep))
        inits.append(np.zeros(cfg.N * (n + m)))
        homotopy = np.array([(1.0 - (i + 1) / N) * x for i in range(N)])
        inits.append(np.concatenate([homotopy.ravel(), np.zeros(N * m)]))
        rng = np.random.default_rng(0)
        draw = 0.5 * rng.standard_normal((N, m))
        inits.append(_pack_shooting(cfg, x,
                                    np.array([cfg.U.clip(u) for u in draw])))
        good = None
        if cand_value is not None:
            good = cand_value * (1.0 + 1e-6) + 1e-12
        sol = _solve_shooting(cfg, x, inits, good_enough=good)

    # a verified feasible candidate bounds the value from above; never
    # return anything worse than it
    if candidate is not None and sol.value != np.inf:
        zc, vc_value, viol = verify_sequences(cfg, x, candidate)
        if viol <= _FEAS_TOL and vc_value < sol.value:
            sol = NominalSolution(v_star=candidate, z_star=zc,
                                  value=vc_value, status=sol.status)
    elif candidate is not None and sol.value == np.inf:
        zc, vc_value, viol = verify_sequences(cfg, x, candidate)
        if viol <= _FEAS_TOL:
            sol = NominalSolution(v_star=candidate, z_star=zc,
                                  value=vc_value, status=_failed("max_iter"))
    return sol


def feasible_region_probe(cfg: Ps2fConfig, states,
                          return_status: bool = False):
    """Feasibility flags of P_N over a batch of states, shape (..., n).

    Failures never raise; a cell that cannot be solved is reported False
    (and its status string kept when return_status is set).
    """
    states = np.asarray(states, dtype=float)
    lead = states.shape[:-1]
    flat = states.reshape(-1, states.shape[-1])
    mask = np.zeros(flat.shape[0], dtype=bool)
    labels = []
    for idx, xi in enumerate(flat):
        try:
            sol = solve_nominal(cfg, xi)
            mask[idx] = sol.status.status == OPTIMAL
            labels.append(sol.status.status)
        except Exception as exc:  # pragma: no cover - defensive
            labels.append(f"error: {exc}")
    if return_status:
        return mask.reshape(lead), np.array(labels).reshape(lead)
    return mask.reshape(lead)
