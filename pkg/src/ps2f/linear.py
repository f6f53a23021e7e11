"""Closed-form machinery for the linear-quadratic case.

DARE solution and LQR gain, the maximal invariant ellipsoid level inside
the box constraints, the lifted stacked-dynamics matrices, and the
analytic membership test for the filter's input set (valid only while
box and terminal constraints are inactive).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ps2f.types import BoxSet

Array = np.ndarray

_DARE_STOP = 1e-12
_DARE_MAX_ITER = 100000
_RESIDUAL_TOL = 1e-10
_MEMBERSHIP_TOL = 1e-9
_EIG_ZERO = 1e-10


@dataclass(frozen=True)
class RiccatiResult:
    P: Array
    K: Array
    A_cl: Array
    residual: float


def solve_dare(A, B, Q, R) -> RiccatiResult:
    """Fixed-point iteration P <- Q + A'PA - A'PB (R+B'PB)^-1 B'PA from
    P0 = Q, stopping at successive Frobenius difference <= 1e-12."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    P = Q.copy()
    for _ in range(_DARE_MAX_ITER):
        BtP = B.T @ P
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        if np.linalg.norm(Pn - P, ord="fro") <= _DARE_STOP:
            P = Pn
            break
        P = Pn
    else:
        raise RuntimeError("DARE fixed-point iteration did not converge; "
                           "check stabilizability of (A, B)")
    P = 0.5 * (P + P.T)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    A_cl = A - B @ K
    resid = float(np.linalg.norm(
        Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A) - P,
        ord="fro",
    ))
    if resid > _RESIDUAL_TOL:
        raise RuntimeError(f"DARE residual {resid:.2e} above tolerance")
    if np.max(np.abs(np.linalg.eigvals(A_cl))) >= 1.0:
        raise RuntimeError("closed-loop matrix A - BK is not Schur stable")
    return RiccatiResult(P=P, K=K, A_cl=A_cl, residual=resid)


def max_ellipsoid_level(P: Array, K: Array, X: BoxSet, U: BoxSet) -> float:
    """Largest gamma with {x'Px <= gamma} inside X and inside the pullback
    of U through u = -Kx: min over faces h'x <= c of c^2 / (h'P^-1 h)."""
    P = np.asarray(P, dtype=float)
    Pinv = np.linalg.inv(P)
    Hx, cx = X.faces()
    rows = [(Hx, cx)]
    if K is not None:
        Hu, cu = U.faces()
        rows.append((-Hu @ np.asarray(K, dtype=float), cu))
    gamma = np.inf
    for H, c in rows:
        for h, ci in zip(H, c):
            denom = float(h @ Pinv @ h)
            if denom <= 0:
                continue
            gamma = min(gamma, ci * ci / denom)
    return float(gamma)


@dataclass(frozen=True)
class LiftedMatrices:
    """Stacked M-step dynamics and the quadratic data of the filter's
    performance constraint in the constraint-inactive regime."""

    Phi: Array
    Gamma: Array
    Qtilde: Array
    Rtilde: Array
    Aeq: Array
    beq: Array
    H: Array
    F: Array
    G: Array
    e1: Array
    eM: Array
    a: float
    M: int


def stack_dynamics(A, B, M: int) -> Tuple[Array, Array]:
    """Prediction matrices over M steps: the stacked state sequence is
    Phi x + Gamma u for the stacked input sequence u."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, m = B.shape
    if M < 1:
        raise ValueError("M >= 1 required")
    powers = [np.eye(n)]
    for _ in range(M):
        powers.append(A @ powers[-1])
    Phi = np.vstack(powers)
    Gamma = np.zeros(((M + 1) * n, M * m))
    for i in range(1, M + 1):
        for j in range(i):
            Gamma[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - 1 - j] @ B
    return Phi, Gamma


def build_lifted(A, B, Q, R, P, K, M: int, a: float) -> LiftedMatrices:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    P = np.asarray(P, dtype=float)
    K = np.asarray(K, dtype=float)
    n, m = B.shape
    Phi, Gamma = stack_dynamics(A, B, M)
    Qt = np.zeros(((M + 1) * n, (M + 1) * n))
    for i in range(M):
        Qt[i * n:(i + 1) * n, i * n:(i + 1) * n] = Q
    Rt = np.kron(np.eye(M), R)
    e1 = np.zeros((m, M * m))
    e1[:, :m] = np.eye(m)
    eM = np.zeros((n, (M + 1) * n))
    eM[:, M * n:] = np.eye(n)
    A_cl = A - B @ K
    AclM = np.linalg.matrix_power(A_cl, M)
    Aeq = eM @ Gamma
    beq = AclM - eM @ Phi
    H = Gamma.T @ Qt @ Gamma + Rt - a * e1.T @ R @ e1
    F = Phi.T @ Qt @ Gamma
    G = Phi.T @ Qt @ Phi - (P - AclM.T @ P @ AclM) - a * Q
    return LiftedMatrices(Phi=Phi, Gamma=Gamma, Qtilde=Qt, Rtilde=Rt,
                          Aeq=Aeq, beq=beq, H=H, F=F, G=G, e1=e1, eM=eM,
                          a=float(a), M=int(M))


def nominal_segment_cost(P: Array, A_cl: Array, M: int, x: Array) -> float:
    """Cumulative stage cost of the first M nominal (LQR) steps,
    x'(P - (A_cl^M)' P A_cl^M) x."""
    P = np.asarray(P, dtype=float)
    AclM = np.linalg.matrix_power(np.asarray(A_cl, dtype=float), M)
    x = np.asarray(x, dtype=float)
    return float(x @ (P - AclM.T @ P @ AclM) @ x)


def membership_quadratic_min(lifted: LiftedMatrices, x: Array, u0: Array) -> float:
    """Minimum of u'Hu + 2x'Fu + x'Gx over stacks with first block u0 and
    the terminal-matching equality; -inf when unbounded below on the slice."""
    x = np.asarray(x, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    n = lifted.Aeq.shape[0]
    d = lifted.H.shape[0]
    if np.linalg.matrix_rank(lifted.Aeq, tol=1e-12) < n:
        raise ValueError("rank-deficient terminal-matching stack: "
                         "M*m < n or degenerate B")
    # stacked equalities: first-block pin, then terminal matching
    E = np.vstack([lifted.e1, lifted.Aeq])
    r = np.concatenate([u0, lifted.beq @ x])
    u_p, *_ = np.linalg.lstsq(E, r, rcond=None)
    if np.max(np.abs(E @ u_p - r)) > 1e-8 * max(1.0, float(np.max(np.abs(r)))):
        # overdetermined and inconsistent: no stack starts with this u0
        return np.inf
    if E.shape[0] >= d:
        Z = np.zeros((d, 0))
    else:
        if np.linalg.matrix_rank(E, tol=1e-12) < E.shape[0]:
            raise ValueError("degenerate equality stack in the lifted problem")
        Qm, _ = np.linalg.qr(E.T, mode="complete")
        Z = Qm[:, E.shape[0]:]
    q0 = float(u_p @ lifted.H @ u_p + 2.0 * x @ lifted.F @ u_p + x @ lifted.G @ x)
    if Z.shape[1] == 0:
        return q0
    Hr = Z.T @ lifted.H @ Z
    gr = Z.T @ (lifted.H @ u_p + lifted.F.T @ x)
    w = np.linalg.eigvalsh(Hr)
    if w.min() < -_EIG_ZERO:
        return -np.inf
    if w.min() > _EIG_ZERO:
        y = np.linalg.solve(Hr, -gr)
        return q0 + float(y @ Hr @ y + 2.0 * gr @ y)
    # singular PSD: minimize over the range of Hr only
    y, *_ = np.linalg.lstsq(Hr, -gr, rcond=1e-10)
    return q0 + float(y @ Hr @ y + 2.0 * gr @ y)


def closed_form_membership(lifted: LiftedMatrices, x: Array, u0: Array) -> bool:
    """True iff some input stack starting with u0 meets the terminal
    equality and the performance quadratic is <= 0 (boundary tolerance
    1e-9). Valid only while box/terminal constraints are inactive."""
    return bool(membership_quadratic_min(lifted, x, u0) <= _MEMBERSHIP_TOL)
