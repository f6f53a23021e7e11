import numpy as np
import pytest
from scipy import linalg as sla

from ps2f.linear import (
    LiftedMatrices,
    build_lifted,
    closed_form_membership,
    max_ellipsoid_level,
    membership_quadratic_min,
    nominal_segment_cost,
    solve_dare,
)
from ps2f.types import BoxSet, SystemModel


A1 = np.array([[1.0, 1.0], [0.0, 1.0]])
B1 = np.eye(2)
Q1 = 10.0 * np.eye(2)
R1 = np.eye(2)


def test_dare_scalar_golden_ratio():
    r = solve_dare(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    assert abs(r.P[0, 0] - (1 + np.sqrt(5)) / 2) < 1e-10


def test_dare_case1_two_decimals():
    r = solve_dare(A1, B1, Q1, R1)
    assert np.allclose(r.P, [[10.92, 0.92], [0.92, 11.85]], atol=0.005)


def test_dare_zero_A():
    Q = np.diag([2.0, 3.0])
    r = solve_dare(np.zeros((2, 2)), np.eye(2), Q, np.eye(2))
    assert np.allclose(r.P, Q, atol=1e-12)


def test_dare_matches_scipy_on_random_systems():
    rng = np.random.default_rng(8)
    for _ in range(10):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        A = rng.standard_normal((n, n)) * 0.9
        B = rng.standard_normal((n, m))
        L = rng.standard_normal((n, n))
        Q = L @ L.T + 0.1 * np.eye(n)
        Lr = rng.standard_normal((m, m))
        R = Lr @ Lr.T + 0.5 * np.eye(m)
        mine = solve_dare(A, B, Q, R)
        ref = sla.solve_discrete_are(A, B, Q, R)
        assert np.allclose(mine.P, ref, atol=1e-8)
        assert mine.residual <= 1e-10
        assert np.max(np.abs(np.linalg.eigvals(mine.A_cl))) < 1.0


def test_max_ellipsoid_scalar():
    X = BoxSet(np.array([-1.0]), np.array([1.0]))
    g = max_ellipsoid_level(np.array([[2.0]]), None, X, X)
    assert abs(g - 2.0) < 1e-12


def test_max_ellipsoid_tighter_face_binds():
    X = BoxSet(np.array([-2.0, -3.0]), np.array([2.0, 3.0]))
    g = max_ellipsoid_level(np.eye(2), None, X, X)
    assert abs(g - 4.0) < 1e-12


def test_max_ellipsoid_case1():
    r = solve_dare(A1, B1, Q1, R1)
    X = BoxSet(-2 * np.ones(2), 2 * np.ones(2))
    U = BoxSet(-np.ones(2), np.ones(2))
    g = max_ellipsoid_level(r.P, r.K, X, U)
    assert abs(g - 7.28) < 0.05


def test_lifted_scalar_m1():
    r = solve_dare(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    lf = build_lifted(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]),
                      np.array([[1.0]]), r.P, r.K, M=1, a=0.0)
    assert np.allclose(lf.Aeq, [[1.0]], atol=1e-12)
    assert np.allclose(lf.beq, -r.K, atol=1e-12)


def test_lifted_rollout_identity():
    rng = np.random.default_rng(1)
    r = solve_dare(A1, B1, Q1, R1)
    model = SystemModel(kind="linear", state_dim=2, input_dim=2, A=A1, B=B1)
    for M in (1, 2, 5):
        lf = build_lifted(A1, B1, Q1, R1, r.P, r.K, M=M, a=0.95)
        for _ in range(100):
            x = rng.standard_normal(2)
            us = rng.standard_normal((M, 2))
            stacked = lf.Phi @ x + lf.Gamma @ us.ravel()
            rolled = model.rollout(x, us).ravel()
            scale = max(1.0, np.max(np.abs(rolled)))
            assert np.max(np.abs(stacked - rolled)) <= 1e-12 * scale


def test_lifted_hessian_against_stagewise_expansion():
    # independent oracle: assemble the constraint quadratic stage by stage
    # and recover its Hessian by finite differencing the quadratic form
    r = solve_dare(A1, B1, Q1, R1)
    M, a = 2, 0.95
    lf = build_lifted(A1, B1, Q1, R1, r.P, r.K, M=M, a=a)
    model = SystemModel(kind="linear", state_dim=2, input_dim=2, A=A1, B=B1)
    x = np.zeros(2)

    def qform(uvec):
        us = uvec.reshape(M, 2)
        xs = model.rollout(x, us)
        L = sum(xs[i] @ Q1 @ xs[i] + us[i] @ R1 @ us[i] for i in range(M))
        return L - a * (x @ Q1 @ x + us[0] @ R1 @ us[0])

    d = M * 2
    Hfd = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            ei = np.eye(d)[i]
            ej = np.eye(d)[j]
            Hfd[i, j] = 0.5 * (qform(ei + ej) - qform(ei) - qform(ej) + qform(np.zeros(d)))
    assert np.allclose(Hfd, lf.H, atol=1e-9)
    ev_mine = np.sort(np.linalg.eigvalsh(lf.H))
    ev_oracle = np.sort(np.linalg.eigvalsh(Hfd))
    assert np.allclose(ev_mine, ev_oracle, atol=1e-9)


def test_segment_cost_matches_rollout_sum():
    r = solve_dare(A1, B1, Q1, R1)
    rng = np.random.default_rng(9)
    for M in range(1, 6):
        for _ in range(20):
            x = rng.uniform(-2, 2, 2)
            z = x.copy()
            total = 0.0
            for _ in range(M):
                v = -r.K @ z
                total += z @ Q1 @ z + v @ R1 @ v
                z = r.A_cl @ z
            assert abs(nominal_segment_cost(r.P, r.A_cl, M, x) - total) <= 1e-9 * max(1.0, total)


def test_segment_cost_zero_at_origin():
    r = solve_dare(A1, B1, Q1, R1)
    assert nominal_segment_cost(r.P, r.A_cl, 3, np.zeros(2)) == 0.0


def test_segment_cost_limits_to_full_value():
    r = solve_dare(A1, B1, Q1, R1)
    x = np.array([2.0, -2.0])
    full = x @ r.P @ x
    assert abs(nominal_segment_cost(r.P, r.A_cl, 200, x) - full) <= 1e-8


def test_membership_origin():
    r = solve_dare(A1, B1, Q1, R1)
    lf = build_lifted(A1, B1, Q1, R1, r.P, r.K, M=2, a=0.95)
    assert closed_form_membership(lf, np.zeros(2), np.zeros(2))
    # any nonzero u0 at the origin fails for a < 1
    for u0 in ([0.3, 0.0], [0.0, -0.4], [0.5, 0.5]):
        assert not closed_form_membership(lf, np.zeros(2), np.array(u0))


def test_membership_lqr_action_is_member():
    r = solve_dare(A1, B1, Q1, R1)
    rng = np.random.default_rng(12)
    for M in (1, 2, 4):
        lf = build_lifted(A1, B1, Q1, R1, r.P, r.K, M=M, a=0.5)
        for _ in range(20):
            x = rng.uniform(-1, 1, 2)
            # the LQR stack meets the constraint with value -a*l(x,u0) <= 0
            assert closed_form_membership(lf, x, -r.K @ x)


def test_membership_monotone_in_a_and_M():
    r = solve_dare(A1, B1, Q1, R1)
    x = np.array([0.3, -0.2])
    grid = np.linspace(-1, 1, 9)
    a_values = [0.0, 0.5, 0.95, 2.0]
    lifted_a = [build_lifted(A1, B1, Q1, R1, r.P, r.K, M=2, a=a) for a in a_values]
    for u1 in grid:
        for u2 in grid:
            u0 = np.array([u1, u2])
            flags = [closed_form_membership(lf, x, u0) for lf in lifted_a]
            for f1, f2 in zip(flags, flags[1:]):
                assert not (f1 and not f2), "membership lost as a grew"
    M_values = [1, 2, 3, 5]
    lifted_M = [build_lifted(A1, B1, Q1, R1, r.P, r.K, M=M, a=0.95) for M in M_values]
    for u1 in grid:
        for u2 in grid:
            u0 = np.array([u1, u2])
            flags = [closed_form_membership(lf, x, u0) for lf in lifted_M]
            for f1, f2 in zip(flags, flags[1:]):
                assert not (f1 and not f2), "membership lost as M grew"


def test_membership_quadratic_min_brute_force():
    # compare the nullspace minimization against dense sampling of the slice
    r = solve_dare(A1, B1, Q1, R1)
    lf = build_lifted(A1, B1, Q1, R1, r.P, r.K, M=3, a=0.5)
    rng = np.random.default_rng(21)
    x = np.array([0.5, 0.4])
    u0 = np.array([0.2, -0.1])
    qmin = membership_quadratic_min(lf, x, u0)
    E = np.vstack([lf.e1, lf.Aeq])
    rvec = np.concatenate([u0, lf.beq @ x])
    u_p, *_ = np.linalg.lstsq(E, rvec, rcond=None)
    Qm, _ = np.linalg.qr(E.T, mode="complete")
    Z = Qm[:, E.shape[0]:]
    best = np.inf
    for _ in range(20000):
        y = rng.uniform(-5, 5, Z.shape[1])
        u = u_p + Z @ y
        q = u @ lf.H @ u + 2 * x @ lf.F @ u + x @ lf.G @ x
        best = min(best, q)
    assert qmin <= best + 1e-9
    assert best - qmin < 0.5  # dense sampling should get close
