import numpy as np
import pytest

from ps2f.nominal import (
    NominalSolution,
    feasible_region_probe,
    sequence_value,
    shifted_candidate,
    solve_nominal,
    terminal_action,
    verify_sequences,
)
from conftest import case1_config, case3_config


def cvxpy_reference(cfg, x):
    """Independent convex solve of the linear OCP."""
    import cvxpy as cp

    N, n, m = cfg.N, 2, 2
    z = cp.Variable((N + 1, n))
    v = cp.Variable((N, m))
    cons = [z[0] == x]
    obj = 0
    for i in range(N):
        cons += [z[i + 1] == cfg.model.A @ z[i] + cfg.model.B @ v[i]]
        cons += [z[i] >= cfg.X.lower, z[i] <= cfg.X.upper]
        cons += [v[i] >= cfg.U.lower, v[i] <= cfg.U.upper]
        obj += cp.quad_form(z[i], cfg.cost.Q) + cp.quad_form(v[i], cfg.cost.R)
    cons += [z[N] >= cfg.X.lower, z[N] <= cfg.X.upper]
    cons += [cp.quad_form(z[N], cfg.Xf.P) <= cfg.Xf.gamma]
    obj += cp.quad_form(z[N], cfg.cost.P_f)
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, v.value


def slsqp_shooting_reference(cfg, x):
    """Independent multiple-shooting solve of the unicycle OCP, best of a
    few deterministic initializations."""
    from scipy.optimize import minimize

    N, n, m = cfg.N, 3, 2
    Ts = cfg.model.Ts

    def unpack(w):
        return w[:N * n].reshape(N, n), w[N * n:].reshape(N, m)

    def fobj(w):
        zs, vs = unpack(w)
        total = cfg.cost.stage(x, vs[0])
        for i in range(1, N):
            total += cfg.cost.stage(zs[i - 1], vs[i])
        return total

    def defects(w):
        zs, vs = unpack(w)
        out = []
        prev = x
        for i in range(N):
            nxt = prev + Ts * np.array([np.cos(prev[2]) * vs[i][0],
                                        np.sin(prev[2]) * vs[i][0],
                                        vs[i][1]])
            out.append(zs[i] - nxt)
            prev = zs[i]
        out.append(zs[N - 1])
        return np.concatenate(out)

    lb = np.concatenate([np.tile(cfg.X.lower, N), np.tile(cfg.U.lower, N)])
    ub = np.concatenate([np.tile(cfg.X.upper, N), np.tile(cfg.U.upper, N)])
    rng = np.random.default_rng(1)
    inits = [np.zeros(N * (n + m)),
             np.concatenate([np.array([(1 - (i + 1) / N) * x
                                       for i in range(N)]).ravel(),
                             np.zeros(N * m)]),
             0.1 * rng.standard_normal(N * (n + m))]
    best = np.inf
    for w0 in inits:
        res = minimize(fobj, w0, method="SLSQP",
                       bounds=list(zip(lb, ub)),
                       constraints=[{"type": "eq", "fun": defects}],
                       options={"maxiter": 400, "ftol": 1e-12})
        if res.success and np.max(np.abs(defects(res.x))) < 1e-7:
            best = min(best, res.fun)
    return best


def assert_invariants(cfg, x, sol):
    assert sol.status.status == "optimal"
    assert np.allclose(sol.z_star[0], x, atol=1e-12)
    for i in range(cfg.N):
        step = cfg.model.step(sol.z_star[i], sol.v_star[i])
        assert np.max(np.abs(sol.z_star[i + 1] - step)) <= 1e-8
    for i in range(cfg.N + 1):
        assert cfg.X.contains(sol.z_star[i], tol=1e-8)
    for i in range(cfg.N):
        assert cfg.U.contains(sol.v_star[i], tol=1e-8)
    assert cfg.Xf.contains(sol.z_star[-1], tol=1e-8)
    assert abs(sol.value - sequence_value(cfg, sol.z_star, sol.v_star)) <= 1e-8


def test_origin_is_zero_cost():
    cfg = case1_config()
    sol = solve_nominal(cfg, np.zeros(2))
    assert sol.status.status == "optimal"
    assert sol.value <= 1e-10
    assert np.max(np.abs(sol.v_star)) <= 1e-6
    assert np.max(np.abs(sol.z_star)) <= 1e-6


def test_case1_corner_matches_convex_reference():
    cfg = case1_config()
    x = np.array([2.0, -2.0])
    sol = solve_nominal(cfg, x)
    assert_invariants(cfg, x, sol)
    ref_value, ref_v = cvxpy_reference(cfg, x)
    assert abs(sol.value - ref_value) <= 1e-6 * max(1.0, abs(ref_value))
    assert np.max(np.abs(sol.v_star - ref_v)) <= 1e-4


def test_case1_interior_matches_convex_reference():
    cfg = case1_config()
    for x in [np.array([0.7, -0.3]), np.array([-1.5, 0.4]),
              np.array([1.0, 1.0])]:
        sol = solve_nominal(cfg, x)
        assert_invariants(cfg, x, sol)
        ref_value, _ = cvxpy_reference(cfg, x)
        assert abs(sol.value - ref_value) <= 1e-6 * max(1.0, abs(ref_value))


def test_horizon_one_infeasible_at_corner():
    # from (2,-2) the one-step reachable set is (0,-2) + [-1,1]^2 and its
    # closest point to the origin in the P-norm stays outside the terminal
    # ellipsoid, so P_1((2,-2)) has no feasible point
    cfg = case1_config().replace(N=1, M=1)
    x = np.array([2.0, -2.0])
    zbest = np.array([0.0, -1.0])
    assert zbest @ cfg.Xf.P @ zbest > cfg.Xf.gamma
    sol = solve_nominal(cfg, x)
    assert sol.status.status == "infeasible"
    assert sol.value == np.inf


def test_outside_state_box_is_infeasible():
    cfg = case1_config()
    sol = solve_nominal(cfg, np.array([2.5, 0.0]))
    assert sol.status.status == "infeasible"


def test_recursive_feasibility_and_decrease_linear():
    cfg = case1_config()
    x = np.array([2.0, -2.0])
    sol = solve_nominal(cfg, x)
    for _ in range(20):
        stage = cfg.cost.stage(x, sol.v_star[0])
        x_next = cfg.model.step(x, sol.v_star[0])
        nxt = solve_nominal(cfg, x_next, warm=sol)
        assert nxt.status.status == "optimal"
        assert nxt.value <= sol.value - stage + 1e-6
        x, sol = x_next, nxt
    assert np.linalg.norm(x) < 0.2


def test_shifted_candidate_is_feasible():
    cfg = case1_config()
    sol = solve_nominal(cfg, np.array([2.0, -2.0]))
    x_next = cfg.model.step(sol.z_star[0], sol.v_star[0])
    cand = shifted_candidate(cfg, sol)
    _, _, viol = verify_sequences(cfg, x_next, cand)
    assert viol <= 1e-8


def test_warm_start_agrees_with_cold():
    cfg = case1_config()
    x = np.array([1.2, -0.8])
    cold = solve_nominal(cfg, x)
    prev = solve_nominal(cfg, np.array([1.4, -0.9]))
    # warm from an unrelated previous state must not change the optimum
    warm = solve_nominal(cfg, x, warm=prev)
    assert abs(cold.value - warm.value) <= 1e-6


def test_explicit_candidate_warm_bounds_value():
    cfg = case1_config()
    # zero input from (0.3, 0) holds the state constant inside X and the
    # terminal ellipsoid, so the all-zeros sequence is feasible
    x = np.array([0.3, 0.0])
    cand = np.zeros((cfg.N, 2))
    _, cand_value, viol = verify_sequences(cfg, x, cand)
    assert viol <= 1e-8
    sol = solve_nominal(cfg, x, warm=cand)
    assert sol.status.status == "optimal"
    assert sol.value <= cand_value + 1e-9


def test_unicycle_origin_is_zero_cost():
    cfg = case3_config()
    sol = solve_nominal(cfg, np.zeros(3))
    assert sol.status.status == "optimal"
    assert sol.value <= 1e-10
    assert np.max(np.abs(sol.v_star)) <= 1e-6


def test_unicycle_small_state_matches_slsqp():
    cfg = case3_config()
    x = np.array([0.1, 0.0, 0.0])
    sol = solve_nominal(cfg, x)
    assert_invariants(cfg, x, sol)
    ref = slsqp_shooting_reference(cfg, x)
    assert sol.value <= ref + 1e-6
    assert abs(sol.value - ref) <= 1e-5 * max(1.0, ref)


def test_unicycle_corner_state_matches_slsqp():
    cfg = case3_config()
    x = np.array([0.5, 0.0, np.pi / 3])
    sol = solve_nominal(cfg, x)
    assert_invariants(cfg, x, sol)
    ref = slsqp_shooting_reference(cfg, x)
    assert sol.value <= ref + 1e-6


def test_unicycle_decrease_along_loop():
    cfg = case3_config()
    x = np.array([0.2, 0.1, -0.3])
    sol = solve_nominal(cfg, x)
    assert sol.status.status == "optimal"
    for _ in range(8):
        stage = cfg.cost.stage(x, sol.v_star[0])
        x_next = cfg.model.step(x, sol.v_star[0])
        nxt = solve_nominal(cfg, x_next, warm=sol)
        assert nxt.status.status == "optimal"
        assert nxt.value <= sol.value - stage + 1e-6
        x, sol = x_next, nxt


def test_terminal_action_keeps_ellipsoid_invariant():
    cfg = case1_config()
    rng = np.random.default_rng(3)
    L = np.linalg.cholesky(np.linalg.inv(cfg.Xf.P))
    for _ in range(50):
        d = rng.standard_normal(2)
        z = np.sqrt(cfg.Xf.gamma) * L @ d / np.linalg.norm(d)
        u = terminal_action(cfg, z)
        zn = cfg.model.step(z, u)
        assert zn @ cfg.Xf.P @ zn <= cfg.Xf.gamma + 1e-9
        assert cfg.U.contains(u, tol=1e-9)


def test_feasible_region_probe_flags():
    cfg = case1_config()
    states = np.array([
        [2.0, -2.0],      # corner, known feasible
        [0.0, 0.0],       # origin
        [0.3, 0.1],       # inside the terminal ellipsoid
        [2.5, 0.0],       # outside X
        [2.0, 2.0],       # far corner, drifts out within one step
    ])
    mask, labels = feasible_region_probe(cfg, states, return_status=True)
    assert mask[0] and mask[1] and mask[2]
    assert not mask[3]
    assert labels[3] == "infeasible"
    # grid shape is preserved
    grid = np.stack([states[:4], states[1:5]])
    assert feasible_region_probe(cfg, grid).shape == (2, 4)
