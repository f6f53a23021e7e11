"""Dense primal active-set QP solver.

Solves  min_z 0.5 z'Hz + g'z  s.t.  Aeq z = beq,  Aineq z <= bineq,
optionally lb <= z <= ub. Sized for the dense OCPs in this package
(a few dozen decision variables), with deterministic pivoting so that
identical inputs give bitwise-identical outputs.

Feasibility is established by a phase-1 problem (minimize the worst
violation t with a tiny quadratic regularizer); an optimal t above
tolerance yields an infeasibility certificate from the phase-1
multipliers. Indefinite Hessians are handled by Levenberg shifts of the
reduced Hessian, lambda doubling from 1e-10.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

Array = np.ndarray

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"

_MAX_ACTIVE_SET_CHANGES = 500
_PHASE1_REG = 1e-8


@dataclass(frozen=True)
class QpProblem:
    H: Array
    g: Array
    Aeq: Optional[Array] = None
    beq: Optional[Array] = None
    Aineq: Optional[Array] = None
    bineq: Optional[Array] = None
    lb: Optional[Array] = None
    ub: Optional[Array] = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        g = np.asarray(self.g, dtype=float).ravel()
        d = g.shape[0]
        if H.shape != (d, d):
            raise ValueError(f"H must be {d}x{d}, got {H.shape}")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "g", g)
        for aname, bname in (("Aeq", "beq"), ("Aineq", "bineq")):
            A = getattr(self, aname)
            b = getattr(self, bname)
            if (A is None) != (b is None):
                raise ValueError(f"{aname} and {bname} must be given together")
            if A is not None:
                A = np.asarray(A, dtype=float).reshape(-1, d)
                b = np.asarray(b, dtype=float).ravel()
                if A.shape[0] != b.shape[0]:
                    raise ValueError(f"{aname} rows must match {bname} length")
                object.__setattr__(self, aname, A)
                object.__setattr__(self, bname, b)
        if self.Aeq is not None and self.Aeq.shape[0] > d:
            raise ValueError("more equality rows than decision variables")
        for name in ("lb", "ub"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).ravel())

    @property
    def dim(self) -> int:
        return self.g.shape[0]


@dataclass
class SolveStatus:
    status: str
    kkt_residual: float
    iterations: int


@dataclass
class QpSolution:
    z: Array
    lam_eq: Array
    lam_ineq: Array  # over folded rows: user Aineq, then lb rows, then ub rows
    status: SolveStatus
    certificate: Optional[dict] = None
    n_user_ineq: int = 0


def _fold_bounds(p: QpProblem):
    """Return (Aeq, beq, Aineq, bineq) with lb/ub folded into Aineq rows."""
    d = p.dim
    Aeq = p.Aeq if p.Aeq is not None else np.zeros((0, d))
    beq = p.beq if p.beq is not None else np.zeros(0)
    rows = [p.Aineq] if p.Aineq is not None else []
    rhs = [p.bineq] if p.bineq is not None else []
    if p.lb is not None:
        keep = np.isfinite(p.lb)
        rows.append(-np.eye(d)[keep])
        rhs.append(-p.lb[keep])
    if p.ub is not None:
        keep = np.isfinite(p.ub)
        rows.append(np.eye(d)[keep])
        rhs.append(p.ub[keep])
    Aineq = np.vstack(rows) if rows else np.zeros((0, d))
    bineq = np.concatenate(rhs) if rhs else np.zeros(0)
    return Aeq, beq, Aineq, bineq


def _nullspace_step(H, grad, Aw, rw, lam0):
    """Solve min 0.5 p'Hp + grad'p s.t. Aw p = rw by the nullspace method.

    Returns (p, lam_shift) where lam_shift is the Levenberg shift used.
    """
    d = H.shape[0]
    if Aw.shape[0] == 0:
        Z = np.eye(d)
        p0 = np.zeros(d)
    else:
        Q, _ = np.linalg.qr(Aw.T, mode="complete")
        w = Aw.shape[0]
        Z = Q[:, w:]
        p0, *_ = np.linalg.lstsq(Aw, rw, rcond=None)
    if Z.shape[1] == 0:
        return p0, 0.0
    Hr = Z.T @ H @ Z
    gr = Z.T @ (grad + H @ p0)
    lam = lam0
    for _ in range(80):
        try:
            Lc = np.linalg.cholesky(Hr + lam * np.eye(Hr.shape[0]))
            y = np.linalg.solve(Lc.T, np.linalg.solve(Lc, -gr))
            return p0 + Z @ y, lam
        except np.linalg.LinAlgError:
            lam = max(2.0 * lam, 1e-10)
    raise np.linalg.LinAlgError("reduced Hessian could not be regularized")


def _multipliers(H, g, z, Aeq, Aw_rows):
    """Least-squares multipliers for g + Hz + Aeq'nu + Aw'lam = 0."""
    grad = g + H @ z
    stack = [Aeq] if Aeq.shape[0] else []
    if Aw_rows.shape[0]:
        stack.append(Aw_rows)
    if not stack:
        return np.zeros(0), np.zeros(0), float(np.linalg.norm(grad, ord=np.inf))
    A = np.vstack(stack)
    mult, *_ = np.linalg.lstsq(A.T, -grad, rcond=None)
    resid = float(np.linalg.norm(grad + A.T @ mult, ord=np.inf))
    nu = mult[: Aeq.shape[0]]
    lam = mult[Aeq.shape[0]:]
    return nu, lam, resid


def _active_set(H, g, Aeq, beq, Aineq, bineq, z0, tol, max_changes):
    """Primal active-set iteration from a feasible z0.

    Returns (z, nu, lam_full, status, iterations, kkt_residual).
    """
    d = H.shape[0]
    q = Aineq.shape[0]
    z = z0.copy()
    # working set: independent inequality rows active at z0
    W: list[int] = []
    if q:
        act = np.flatnonzero(bineq - Aineq @ z <= tol)
        base = Aeq.copy()
        for i in act:
            cand = np.vstack([base, Aineq[i:i + 1]])
            if np.linalg.matrix_rank(cand, tol=1e-12) == cand.shape[0] and cand.shape[0] <= d:
                W.append(int(i))
                base = cand
    it = 0
    lam_shift = 0.0
    while it < max_changes:
        it += 1
        Aw = np.vstack([Aeq, Aineq[W]]) if (Aeq.shape[0] or W) else np.zeros((0, d))
        rw = np.zeros(Aw.shape[0])
        grad = g + H @ z
        try:
            p, lam_shift = _nullspace_step(H, grad, Aw, rw, 0.0)
        except np.linalg.LinAlgError:
            return z, np.zeros(Aeq.shape[0]), np.zeros(q), NUMERICAL_FAILURE, it, np.inf
        if np.linalg.norm(p, ord=np.inf) <= tol:
            nu, lam_w, resid = _multipliers(H, g, z, Aeq, Aineq[W])
            if len(W) == 0 or np.all(lam_w >= -tol):
                lam_full = np.zeros(q)
                lam_full[W] = np.maximum(lam_w, 0.0)
                return z, nu, lam_full, OPTIMAL, it, resid
            j = int(np.argmin(lam_w))  # most negative multiplier, lowest index wins ties
            W.pop(j)
            continue
        # ratio test against rows not in the working set
        alpha = 1.0
        block = -1
        if q:
            mask = np.ones(q, dtype=bool)
            mask[W] = False
            Ap = Aineq @ p
            for i in np.flatnonzero(mask):
                if Ap[i] > tol:
                    ratio = (bineq[i] - Aineq[i] @ z) / Ap[i]
                    if ratio < alpha - 1e-14:
                        alpha = max(ratio, 0.0)
                        block = i
        z = z + alpha * p
        if block >= 0:
            W.append(block)
    return z, np.zeros(Aeq.shape[0]), np.zeros(q), MAX_ITER, it, np.inf


def _phase1(Aeq, beq, Aineq, bineq, z0, tol):
    """Minimize the worst constraint violation t over (z, t).

    Returns (z_feasible or None, certificate or None, iterations).
    """
    d = z0.shape[0] if z0 is not None else (
        Aeq.shape[1] if Aeq.shape[0] else Aineq.shape[1]
    )
    z0 = np.zeros(d) if z0 is None else z0
    # rows: Aineq z - t <= b; Aeq z - t <= b; -Aeq z - t <= -b; -t <= 0
    rows = [
        np.hstack([Aineq, -np.ones((Aineq.shape[0], 1))]),
        np.hstack([Aeq, -np.ones((Aeq.shape[0], 1))]),
        np.hstack([-Aeq, -np.ones((Aeq.shape[0], 1))]),
        np.hstack([np.zeros((1, d)), -np.ones((1, 1))]),
    ]
    A1 = np.vstack(rows)
    b1 = np.concatenate([bineq, beq, -beq, np.zeros(1)])
    viol = max(0.0, float(np.max(A1[:, :d] @ z0 - b1)) if A1.shape[0] else 0.0)
    w0 = np.concatenate([z0, [viol + 1.0]])  # strictly feasible start
    H1 = _PHASE1_REG * np.eye(d + 1)
    g1 = np.zeros(d + 1)
    g1[d] = 1.0
    w, nu, lam, status, it, _ = _active_set(
        H1, g1, np.zeros((0, d + 1)), np.zeros(0), A1, b1, w0, tol, 4 * _MAX_ACTIVE_SET_CHANGES
    )
    if status not in (OPTIMAL,):
        return None, {"reason": status}, it
    t = w[d]
    if t > 10.0 * tol:
        # Farkas-style certificate: lam'A ~ 0, lam'b < 0, lam >= 0 on original rows
        cert = {
            "violation": float(t),
            "multipliers": lam[: Aineq.shape[0]].copy(),
            "eq_multipliers": (lam[Aineq.shape[0]: Aineq.shape[0] + Aeq.shape[0]]
                               - lam[Aineq.shape[0] + Aeq.shape[0]: -1]).copy(),
        }
        return None, cert, it
    return w[:d], None, it


def solve_qp(problem: QpProblem, tol: float = 1e-9,
             x0: Optional[Array] = None) -> QpSolution:
    """Solve the QP; returns primal point, multipliers and a SolveStatus.

    On OPTIMAL the KKT conditions hold within tol (stationarity checked by
    re-evaluation, feasibility by construction of the active-set path).
    On INFEASIBLE the certificate dict carries the phase-1 violation and
    multipliers. x0, when given and feasible, skips phase-1.
    """
    Aeq, beq, Aineq, bineq = _fold_bounds(problem)
    d = problem.dim
    n_user = problem.Aineq.shape[0] if problem.Aineq is not None else 0
    it0 = 0
    z0 = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).ravel()
        feas = True
        if Aeq.shape[0] and np.max(np.abs(Aeq @ x0 - beq)) > tol:
            feas = False
        if feas and Aineq.shape[0] and np.max(Aineq @ x0 - bineq) > tol:
            feas = False
        if feas:
            z0 = x0
    if z0 is None:
        if Aeq.shape[0] == 0 and Aineq.shape[0] == 0:
            z0 = np.zeros(d)
        else:
            z0, cert, it0 = _phase1(Aeq, beq, Aineq, bineq, x0, tol)
            if z0 is None:
                return QpSolution(
                    z=np.zeros(d), lam_eq=np.zeros(Aeq.shape[0]),
                    lam_ineq=np.zeros(Aineq.shape[0]),
                    status=SolveStatus(INFEASIBLE, np.inf, it0),
                    certificate=cert, n_user_ineq=n_user,
                )
            # polish exact equality feasibility after phase-1
            if Aeq.shape[0]:
                corr, *_ = np.linalg.lstsq(Aeq, beq - Aeq @ z0, rcond=None)
                if Aineq.shape[0] == 0 or np.max(Aineq @ (z0 + corr) - bineq) <= tol:
                    z0 = z0 + corr
    z, nu, lam, status, it, resid = _active_set(
        problem.H, problem.g, Aeq, beq, Aineq, bineq, z0, tol, _MAX_ACTIVE_SET_CHANGES
    )
    if status == OPTIMAL and resid > max(tol, 1e-7 * (1.0 + np.linalg.norm(problem.g))):
        status = NUMERICAL_FAILURE
    return QpSolution(
        z=z, lam_eq=nu, lam_ineq=lam,
        status=SolveStatus(status, resid, it0 + it),
        certificate=None, n_user_ineq=n_user,
    )
