"""SQP solver for the nonlinear OCPs.

Standard line-search SQP: a QP subproblem per iteration built from exact
Jacobians, an l1 merit function with backtracking, and a Gauss-Newton
feasibility-restoration phase when the linearized constraint set is empty.
The Lagrangian Hessian comes from an optional exact callback or from
central finite differences of the Lagrangian gradient (step 1e-6).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from ps2f.qp import (
    INFEASIBLE,
    MAX_ITER,
    NUMERICAL_FAILURE,
    OPTIMAL,
    QpProblem,
    SolveStatus,
    solve_qp,
)

Array = np.ndarray

_FD_STEP = 1e-6
_RESTORE_STALL_TOL = 1e-12
_RESTORE_STALL_ITERS = 10


@dataclass(frozen=True)
class NlpProblem:
    """min f(z) s.t. h(z) = 0, c(z) <= 0, lb <= z <= ub.

    objective(z) -> (f, grad); eq(z) -> (h, Jh); ineq(z) -> (c, Jc).
    All evaluators must be deterministic pure functions. lag_hess, when
    given, returns the exact Hessian of f + lam'h + mu'c.
    """

    dim: int
    objective: Callable[[Array], Tuple[float, Array]]
    eq: Optional[Callable[[Array], Tuple[Array, Array]]] = None
    ineq: Optional[Callable[[Array], Tuple[Array, Array]]] = None
    x0: Optional[Array] = None
    lb: Optional[Array] = None
    ub: Optional[Array] = None
    lag_hess: Optional[Callable[[Array, Array, Array], Array]] = None
    # convexify QP subproblems; for objectives with flat directions
    # (projection on one coordinate block) the exact Hessian is singular
    # and the active-set subproblem thrashes along its null space
    hess_floor: bool = False


@dataclass
class NlpSolution:
    z: Array
    status: SolveStatus
    lam_eq: Array
    lam_ineq: Array
    objective: float


def _eval_all(p: NlpProblem, z: Array):
    f, g = p.objective(z)
    if p.eq is not None:
        h, Jh = p.eq(z)
        h = np.asarray(h, dtype=float).ravel()
        Jh = np.asarray(Jh, dtype=float).reshape(len(h), p.dim)
    else:
        h, Jh = np.zeros(0), np.zeros((0, p.dim))
    if p.ineq is not None:
        c, Jc = p.ineq(z)
        c = np.asarray(c, dtype=float).ravel()
        Jc = np.asarray(Jc, dtype=float).reshape(len(c), p.dim)
    else:
        c, Jc = np.zeros(0), np.zeros((0, p.dim))
    return float(f), np.asarray(g, dtype=float).ravel(), h, Jh, c, Jc


def _lagrangian_grad(p: NlpProblem, z: Array, lam: Array, mu: Array) -> Array:
    _, g, h, Jh, c, Jc = _eval_all(p, z)
    out = g
    if len(lam):
        out = out + Jh.T @ lam
    if len(mu):
        out = out + Jc.T @ mu
    return out


def _fd_lag_hess(p: NlpProblem, z: Array, lam: Array, mu: Array) -> Array:
    d = p.dim
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = _FD_STEP
        gp = _lagrangian_grad(p, z + e, lam, mu)
        gm = _lagrangian_grad(p, z - e, lam, mu)
        H[:, j] = (gp - gm) / (2 * _FD_STEP)
    return 0.5 * (H + H.T)


def _violation(h: Array, c: Array) -> float:
    v = 0.0
    if len(h):
        v += float(np.sum(np.abs(h)))
    if len(c):
        v += float(np.sum(np.maximum(c, 0.0)))
    return v


def _clip_box(p: NlpProblem, z: Array) -> Array:
    if p.lb is not None:
        z = np.maximum(z, p.lb)
    if p.ub is not None:
        z = np.minimum(z, p.ub)
    return z


def _kkt_residual(p: NlpProblem, z, g, Jh, Jc, h, c, lam, mu,
                  tol: float = 1e-9) -> float:
    gL = g.copy()
    if len(lam):
        gL += Jh.T @ lam
    if len(mu):
        gL += Jc.T @ mu
    # project stationarity through the box: one-sided at active bounds;
    # the activity window must cover the QP subproblem's own tolerance,
    # otherwise its bound multipliers look like stationarity violations
    act = max(1e-10, tol)
    r_stat = np.abs(gL)
    if p.lb is not None:
        at_lb = z <= p.lb + act
        r_stat[at_lb] = np.maximum(0.0, -gL[at_lb])
    if p.ub is not None:
        at_ub = z >= p.ub - act
        r_stat[at_ub] = np.maximum(0.0, gL[at_ub])
    r = float(np.max(r_stat)) if len(r_stat) else 0.0
    if len(h):
        r = max(r, float(np.max(np.abs(h))))
    if len(c):
        r = max(r, float(np.max(c)))
        r = max(r, float(np.max(np.abs(mu * c))) if len(mu) else 0.0)
    return r


def _restore(p: NlpProblem, z: Array, tol: float):
    """Gauss-Newton steps on 0.5*(|h|^2 + |c+|^2), each step solved as a
    bound-constrained least-squares problem so the iterates respect the
    boxes. Succeeds once the violation is small or the linearization has
    become consistent inside the box; fails on a stall."""
    stall = 0
    best = np.inf
    nudged = False
    for _ in range(60):
        _, _, h, Jh, c, Jc = _eval_all(p, z)
        theta = _violation(h, c)
        if theta <= tol:
            return z, True
        act = c > 0
        J = np.vstack([Jh, Jc[act]])
        r = np.concatenate([h, c[act]])
        if J.shape[0] == 0:
            return z, True
        H = J.T @ J + 1e-8 * np.eye(p.dim)
        sub = QpProblem(H=H, g=J.T @ r,
                        lb=p.lb - z if p.lb is not None else None,
                        ub=p.ub - z if p.ub is not None else None)
        qp = solve_qp(sub, tol=1e-10, x0=np.zeros(p.dim))
        step = qp.z
        if np.linalg.norm(step, ord=np.inf) <= 1e-12 and not nudged:
            # Jacobian vanished at this point; kick off the degenerate spot
            z = _clip_box(p, z + 1e-4 * np.ones(p.dim))
            nudged = True
            continue
        consistent = float(np.max(np.abs(r + J @ step))) <= 1e-10
        alpha = 1.0
        improved = False
        for _ in range(25):
            zt = _clip_box(p, z + alpha * step)
            _, _, ht, _, ct, _ = _eval_all(p, zt)
            if _violation(ht, ct) < theta - 1e-16:
                z = zt
                improved = True
                break
            alpha *= 0.5
        if not improved:
            return z, False
        if consistent and alpha == 1.0:
            # the linearized constraints admit a point inside the box
            # again; hand control back to the SQP iteration
            return z, True
        if best - theta < _RESTORE_STALL_TOL:
            stall += 1
            if stall >= _RESTORE_STALL_ITERS:
                return z, False
        else:
            stall = 0
        best = min(best, theta)
    return z, False


def solve_nlp(p: NlpProblem, tol: float = 1e-6, max_outer: int = 60) -> NlpSolution:
    """Run SQP from p.x0; returns the iterate with KKT residual and status."""
    d = p.dim
    z = np.zeros(d) if p.x0 is None else np.asarray(p.x0, dtype=float).ravel().copy()
    z = _clip_box(p, z)
    lam = np.zeros(0)
    mu = np.zeros(0)
    nu_pen = 1.0
    status = MAX_ITER
    it = 0
    resid = np.inf
    consecutive_restores = 0
    for it in range(1, max_outer + 1):
        f, g, h, Jh, c, Jc = _eval_all(p, z)
        if len(lam) != len(h):
            lam = np.zeros(len(h))
        if len(mu) != len(c):
            mu = np.zeros(len(c))
        resid = _kkt_residual(p, z, g, Jh, Jc, h, c, lam, mu, tol)
        if p.lag_hess is not None:
            W = np.asarray(p.lag_hess(z, lam, mu), dtype=float)
        else:
            W = _fd_lag_hess(p, z, lam, mu)
        W = 0.5 * (W + W.T)
        if p.hess_floor:
            ew, ev = np.linalg.eigh(W)
            floor = 1e-8 * max(1.0, float(ew[-1]))
            if ew[0] < floor:
                W = (ev * np.maximum(ew, floor)) @ ev.T
        lb_d = p.lb - z if p.lb is not None else None
        ub_d = p.ub - z if p.ub is not None else None
        sub = QpProblem(H=W, g=g,
                        Aeq=Jh if len(h) else None, beq=-h if len(h) else None,
                        Aineq=Jc if len(c) else None, bineq=-c if len(c) else None,
                        lb=lb_d, ub=ub_d)
        qp = solve_qp(sub, tol=1e-9, x0=np.zeros(d))
        if qp.status.status in (INFEASIBLE, NUMERICAL_FAILURE):
            # singular KKT systems land here too (rank-deficient
            # constraint rows); restoration moves the iterate enough to
            # change the active geometry before we give up
            consecutive_restores += 1
            if consecutive_restores > 5:
                return NlpSolution(z, SolveStatus(qp.status.status, resid, it),
                                   lam, mu, f)
            z, ok = _restore(p, z, tol)
            if not ok:
                return NlpSolution(z, SolveStatus(qp.status.status, resid, it),
                                   lam, mu, f)
            lam = np.zeros(0)
            mu = np.zeros(0)
            continue
        consecutive_restores = 0
        dstep = qp.z
        lam_new = qp.lam_eq
        mu_new = qp.lam_ineq[: len(c)] if len(c) else np.zeros(0)
        step_norm = float(np.linalg.norm(dstep, ord=np.inf))
        theta = _violation(h, c)
        if step_norm <= tol and theta <= tol:
            lam, mu = lam_new, mu_new
            resid = _kkt_residual(p, z, g, Jh, Jc, h, c, lam, mu, tol)
            status = OPTIMAL if resid <= 10 * tol else MAX_ITER
            if status == OPTIMAL:
                return NlpSolution(z, SolveStatus(OPTIMAL, resid, it), lam, mu, f)
        # l1 merit with penalty at least the largest multiplier
        mult_inf = max(
            float(np.max(np.abs(lam_new))) if len(lam_new) else 0.0,
            float(np.max(mu_new)) if len(mu_new) else 0.0,
        )
        nu_pen = max(nu_pen, 1.5 * mult_inf + 1.0)
        phi0 = f + nu_pen * theta
        dphi = float(g @ dstep) - nu_pen * theta
        alpha = 1.0
        accepted = False
        for ls in range(30):
            zt = _clip_box(p, z + alpha * dstep)
            ft, _, ht, _, ct, _ = _eval_all(p, zt)
            if ft + nu_pen * _violation(ht, ct) <= phi0 + 1e-4 * alpha * min(dphi, 0.0):
                z = zt
                lam, mu = lam_new, mu_new
                accepted = True
                break
            if ls == 0 and len(h):
                # second-order correction: the penalty picks up curvature
                # of the equalities at the full step and can reject pure
                # Newton steps arbitrarily close to the solution
                dc, *_ = np.linalg.lstsq(Jh, -ht, rcond=None)
                zc = _clip_box(p, z + dstep + dc)
                fc, _, hc, _, cc, _ = _eval_all(p, zc)
                if fc + nu_pen * _violation(hc, cc) <= phi0 + 1e-4 * min(dphi, 0.0):
                    z = zc
                    lam, mu = lam_new, mu_new
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            # merit cannot improve along d: either converged or stuck
            f, g, h, Jh, c, Jc = _eval_all(p, z)
            resid = _kkt_residual(p, z, g, Jh, Jc, h, c, lam_new, mu_new, tol)
            ok = resid <= 10 * tol and _violation(h, c) <= tol
            return NlpSolution(
                z, SolveStatus(OPTIMAL if ok else MAX_ITER, resid, it),
                lam_new, mu_new, f,
            )
    f, g, h, Jh, c, Jc = _eval_all(p, z)
    resid = _kkt_residual(p, z, g, Jh, Jc, h, c, lam, mu, tol)
    if resid <= 10 * tol and _violation(h, c) <= tol:
        status = OPTIMAL
    return NlpSolution(z, SolveStatus(status, resid, it), lam, mu, f)
