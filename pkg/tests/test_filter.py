import numpy as np
import pytest

from ps2f.filter import (
    FilterResult,
    boundary_polylines,
    filter as filter_command,
    s2_membership,
    sample_s2_set,
    segment_cost,
)
from ps2f.linear import build_lifted, closed_form_membership
from ps2f.nominal import solve_nominal, terminal_gain

from conftest import case1_config, case3_config, wide_box_config


def assert_filter_invariants(cfg, res: FilterResult, nominal, M):
    assert res.x_traj.shape == (M + 1, cfg.model.state_dim)
    assert res.u_stack.shape == (M, cfg.model.input_dim)
    assert np.max(np.abs(res.x_traj[M] - nominal.z_star[M])) <= 1e-6
    assert res.performance_slack <= 1e-6
    for i in range(M):
        assert cfg.X.contains(res.x_traj[i], tol=1e-8)
        assert cfg.U.contains(res.u_stack[i], tol=1e-8)
    assert np.allclose(res.u_applied, res.u_stack[0])


def slsqp_projection(cfg, x, u_ext, nominal, a, M):
    """Independent single-shooting projection solve."""
    from scipy.optimize import minimize

    m = cfg.model.input_dim
    L_nom = segment_cost(cfg, nominal.z_star, nominal.v_star, M)

    def states(U):
        return cfg.model.rollout(x, U.reshape(M, m))

    def q_of(U):
        return (segment_cost(cfg, states(U), U.reshape(M, m), M)
                - L_nom - a * cfg.cost.stage(x, U[:m]))

    def box_slack(U):
        xs = states(U)
        out = []
        for i in range(1, M):
            out.extend(cfg.X.upper - xs[i])
            out.extend(xs[i] - cfg.X.lower)
        return np.asarray(out) if out else np.zeros(1)

    cons = [
        {"type": "eq", "fun": lambda U: states(U)[M] - nominal.z_star[M]},
        {"type": "ineq", "fun": lambda U: -q_of(U)},
        {"type": "ineq", "fun": box_slack},
    ]
    bounds = [(cfg.U.lower[j % m], cfg.U.upper[j % m]) for j in range(M * m)]
    best = None
    blend = 0.5 * (nominal.v_star[:M].ravel()
                   + np.tile(cfg.U.clip(u_ext), M))
    for U0 in (nominal.v_star[:M].ravel(), blend):
        r = minimize(lambda U: float(np.sum((U[:m] - u_ext) ** 2)),
                     U0, method="SLSQP", constraints=cons, bounds=bounds,
                     options={"maxiter": 300, "ftol": 1e-12})
        if not r.success:
            continue
        U = r.x
        ok = (q_of(U) <= 1e-7
              and np.max(np.abs(states(U)[M] - nominal.z_star[M])) <= 1e-6
              and np.min(box_slack(U)) >= -1e-7)
        if ok and (best is None or r.fun < best[0]):
            best = (r.fun, U)
    return best


def slsqp_membership(cfg, x, u0, nominal, a, M):
    """Independent membership check: first input substituted into the
    rollout, budget left-hand side minimized over the tail inputs;
    member iff the minimum is <= 0."""
    from scipy.optimize import minimize

    m = cfg.model.input_dim
    if not cfg.U.contains(u0, tol=1e-9):
        return False
    x1 = cfg.model.step(x, u0)
    if M >= 2 and not cfg.X.contains(x1, tol=1e-9):
        # the x(1) box depends on u0 alone
        return False
    L_nom = segment_cost(cfg, nominal.z_star, nominal.v_star, M)

    def stack(T):
        return np.vstack([u0, T.reshape(M - 1, m)])

    def q_of(T):
        us = stack(T)
        return (segment_cost(cfg, cfg.model.rollout(x, us), us, M)
                - L_nom - a * cfg.cost.stage(x, u0))

    def box_slack(T):
        xs = cfg.model.rollout(x, stack(T))
        out = []
        for i in range(2, M):
            out.extend(cfg.X.upper - xs[i])
            out.extend(xs[i] - cfg.X.lower)
        return np.asarray(out) if out else np.zeros(1)

    def terminal(T):
        return cfg.model.rollout(x, stack(T))[M] - nominal.z_star[M]

    if M == 1:
        if np.max(np.abs(cfg.model.step(x, u0) - nominal.z_star[1])) > 1e-6:
            return False
        return bool(q_of(np.zeros(0)) <= 1e-6)

    cons = [{"type": "eq", "fun": terminal},
            {"type": "ineq", "fun": box_slack}]
    bounds = [(cfg.U.lower[j % m], cfg.U.upper[j % m])
              for j in range((M - 1) * m)]
    best = None
    for T0 in (nominal.v_star[1:M].ravel(), np.zeros((M - 1) * m)):
        r = minimize(q_of, T0, method="SLSQP", constraints=cons,
                     bounds=bounds, options={"maxiter": 300, "ftol": 1e-14})
        if not r.success:
            continue
        feas = (np.max(np.abs(terminal(r.x))) <= 1e-6
                and np.min(box_slack(r.x)) >= -1e-7)
        if not feas:
            continue
        if best is None or r.fun < best:
            best = float(r.fun)
        if best <= 1e-6:
            break
    if best is None:
        return None
    return bool(best <= 1e-6)


def test_a_zero_reduces_to_nominal_action():
    cfg = case1_config()
    for x in (np.array([2.0, -2.0]), np.array([0.5, 1.0]),
              np.array([-1.2, 0.3])):
        nom = solve_nominal(cfg, x)
        for u_ext in (np.array([0.9, -0.7]), np.array([-2.0, 2.0])):
            res = filter_command(cfg, x, u_ext, nom, a=0.0, M=2)
            assert_filter_invariants(cfg, res, nom, 2)
            assert np.max(np.abs(res.u_applied - nom.v_star[0])) <= 1e-6
            got = segment_cost(cfg, res.x_traj, res.u_stack, 2)
            want = segment_cost(cfg, nom.z_star, nom.v_star, 2)
            assert abs(got - want) <= 1e-6


def test_origin_set_is_singleton_zero():
    cfg = case1_config()
    x = np.zeros(2)
    nom = solve_nominal(cfg, x)
    for u_ext in (np.array([0.7, -0.3]), np.array([-1.0, -1.0])):
        res = filter_command(cfg, x, u_ext, nom, a=0.95, M=2)
        assert_filter_invariants(cfg, res, nom, 2)
        assert np.max(np.abs(res.u_applied)) <= 1e-6


def test_member_command_passes_through():
    cfg = case1_config()
    x = np.array([2.0, -2.0])
    nom = solve_nominal(cfg, x)
    res = filter_command(cfg, x, nom.v_star[0], nom, a=0.95, M=2)
    assert_filter_invariants(cfg, res, nom, 2)
    assert res.distortion <= 1e-10


def test_projection_matches_slsqp_case1():
    cfg = case1_config()
    x = np.array([2.0, -2.0])
    nom = solve_nominal(cfg, x)
    u_ext = np.array([-1.2 * np.cos(0.2), -0.2])
    for a in (0.95, 2.0):
        res = filter_command(cfg, x, u_ext, nom, a=a, M=2)
        assert_filter_invariants(cfg, res, nom, 2)
        assert not res.used_fallback
        ref = slsqp_projection(cfg, x, u_ext, nom, a, 2)
        assert ref is not None
        assert res.distortion <= ref[0] + 1e-6
        assert abs(res.distortion - ref[0]) <= 1e-5 * max(1.0, ref[0])


def test_filter_is_idempotent():
    cfg = case1_config()
    x = np.array([2.0, -2.0])
    nom = solve_nominal(cfg, x)
    u_ext = np.array([-1.2 * np.cos(0.2), -0.2])
    first = filter_command(cfg, x, u_ext, nom, a=0.95, M=2)
    second = filter_command(cfg, x, first.u_applied, nom, a=0.95, M=2)
    assert second.distortion <= 1e-10


def test_m_equal_one_pins_the_nominal_action():
    cfg = case1_config()
    rng = np.random.default_rng(3)
    for x in (np.array([2.0, -2.0]), np.array([-0.4, 0.9])):
        nom = solve_nominal(cfg, x)
        for a in (0.95, 100.0):
            u_ext = rng.uniform(-2, 2, size=2)
            res = filter_command(cfg, x, u_ext, nom, a=a, M=1)
            assert_filter_invariants(cfg, res, nom, 1)
            assert np.max(np.abs(res.u_applied - nom.v_star[0])) <= 1e-6


def test_feasibility_inherited_on_random_states():
    # the filter must never report genuine infeasibility when the
    # nominal solve is optimal, whatever (a, M, u_ext) we throw at it
    cfg = case1_config()
    rng = np.random.default_rng(11)
    a_pool = [0.0, 0.3, 0.95, 2.0, 100.0]
    m_pool = [1, 2, 3, 5]
    checked = 0
    tries = 0
    while checked < 500 and tries < 2000:
        tries += 1
        x = rng.uniform(-2, 2, size=2)
        nom = solve_nominal(cfg, x)
        if nom.status.status != "optimal":
            continue
        a = a_pool[checked % len(a_pool)]
        M = m_pool[checked % len(m_pool)]
        u_ext = rng.uniform(-2, 2, size=2)
        res = filter_command(cfg, x, u_ext, nom, a=a, M=M)
        assert_filter_invariants(cfg, res, nom, M)
        checked += 1
    assert checked == 500


def test_membership_basics():
    cfg = case1_config()
    x = np.array([2.0, -2.0])
    nom = solve_nominal(cfg, x)
    assert s2_membership(cfg, x, nom.v_star[0], nom, a=0.95, M=2) is True
    assert s2_membership(cfg, x, np.array([1.5, 0.0]), nom, a=0.95, M=2) is False
    x0 = np.zeros(2)
    nom0 = solve_nominal(cfg, x0)
    assert s2_membership(cfg, x0, np.zeros(2), nom0, a=0.95, M=2) is True
    assert s2_membership(cfg, x0, np.array([0.1, 0.0]), nom0, a=0.95, M=2) is False


def exact_membership_m2(cfg, x, u0, nominal, a):
    """With M=2 and invertible B the terminal equality pins the tail
    input, so membership reduces to explicit checks on one point.
    Returns (member, clearance) where clearance is the distance of the
    tightest quantity from its threshold."""
    A, B = cfg.model.A, cfg.model.B
    x1 = A @ x + B @ u0
    u1 = np.linalg.solve(B, nominal.z_star[2] - A @ x1)
    q = (cfg.cost.stage(x, u0) + cfg.cost.stage(x1, u1)
         - segment_cost(cfg, nominal.z_star, nominal.v_star, 2)
         - a * cfg.cost.stage(x, u0))
    margins = np.concatenate([
        cfg.U.upper - u0, u0 - cfg.U.lower,
        cfg.U.upper - u1, u1 - cfg.U.lower,
        cfg.X.upper - x1, x1 - cfg.X.lower,
        [-q],
    ])
    # u0 margins are exact lattice arithmetic on both sides of the
    # comparison; only the derived quantities can be tolerance-ambiguous
    clearance = float(np.min(np.abs(margins[4:])))
    return bool(np.min(margins) >= 0.0), clearance


def test_membership_matches_exact_tail_elimination():
    cfg = case1_config()
    x = np.array([1.0, -1.0])
    nom = solve_nominal(cfg, x)
    grid = sample_s2_set(cfg, x, nom, 0.95, 2, grid_resolution=21)
    assert grid.indeterminate_fraction() == 0.0
    checked = 0
    for i, a1 in enumerate(grid.u1_axis):
        for j, a2 in enumerate(grid.u2_axis):
            ref, clearance = exact_membership_m2(
                cfg, x, np.array([a1, a2]), nom, 0.95)
            if clearance <= 1e-7:
                continue
            assert grid.values[i, j] == (1 if ref else 0)
            checked += 1
    assert checked >= 400


def test_membership_nested_in_a_and_m():
    cfg = case1_config()
    x = np.array([1.0, -1.0])
    nom = solve_nominal(cfg, x)
    grids_a = [sample_s2_set(cfg, x, nom, a, 2, grid_resolution=21).values
               for a in (0.0, 0.5, 0.95)]
    for lo, hi in zip(grids_a, grids_a[1:]):
        assert not np.any((lo == 1) & (hi == 0))
    grids_m = [sample_s2_set(cfg, x, nom, 0.95, M, grid_resolution=21).values
               for M in (1, 2, 3)]
    for lo, hi in zip(grids_m, grids_m[1:]):
        assert not np.any((lo == 1) & (hi == 0))


def test_grid_with_a_zero_collapses_to_nominal_cell():
    cfg = case1_config()
    x = np.array([1.0, -1.0])
    nom = solve_nominal(cfg, x)
    grid = sample_s2_set(cfg, x, nom, 0.0, 2, grid_resolution=21)
    hits = np.argwhere(grid.values == 1)
    assert len(hits) <= 1
    spacing = grid.u1_axis[1] - grid.u1_axis[0]
    for i, j in hits:
        cell = np.array([grid.u1_axis[i], grid.u2_axis[j]])
        assert np.max(np.abs(cell - nom.v_star[0])) <= spacing / 2 + 1e-12


def test_projection_beats_every_sampled_member():
    cfg = case1_config()
    x = np.array([2.0, -2.0])
    nom = solve_nominal(cfg, x)
    u_ext = np.array([-1.2 * np.cos(0.2), -0.2])
    res = filter_command(cfg, x, u_ext, nom, a=0.95, M=2)
    grid = sample_s2_set(cfg, x, nom, 0.95, 2, grid_resolution=41)
    members = np.argwhere(grid.values == 1)
    assert len(members) > 0
    d_star = np.sqrt(res.distortion)
    for i, j in members:
        cell = np.array([grid.u1_axis[i], grid.u2_axis[j]])
        assert d_star <= np.linalg.norm(u_ext - cell) + 1e-9


def fit_slice_quadratic(lifted, x):
    """Reconstruct the scalar quadratic u0 -> min-over-tail budget value
    from point evaluations; six samples pin a 2-d quadratic exactly."""
    from ps2f.linear import membership_quadratic_min

    pts = np.array([[0.0, 0.0], [0.3, 0.0], [0.0, 0.3], [-0.3, 0.0],
                    [0.3, 0.3], [0.0, -0.3]])
    basis = np.array([[1.0, p[0], p[1], p[0] ** 2, p[0] * p[1], p[1] ** 2]
                      for p in pts])
    vals = np.array([membership_quadratic_min(lifted, x, p) for p in pts])
    coef = np.linalg.solve(basis, vals)

    def q_tilde(u):
        u = np.atleast_2d(u)
        return (coef[0] + coef[1] * u[:, 0] + coef[2] * u[:, 1]
                + coef[3] * u[:, 0] ** 2 + coef[4] * u[:, 0] * u[:, 1]
                + coef[5] * u[:, 1] ** 2)

    rng = np.random.default_rng(0)
    probe = rng.uniform(-1, 1, size=(10, 2))
    direct = np.array([membership_quadratic_min(lifted, x, p) for p in probe])
    assert np.max(np.abs(q_tilde(probe) - direct)) <= 1e-9
    S = np.array([[coef[3], coef[4] / 2], [coef[4] / 2, coef[5]]])
    b = np.array([coef[1], coef[2]]) / 2
    c = coef[0]
    return q_tilde, S, b, c


def project_onto_ellipse(u_ext, S, b, c):
    """Euclidean projection onto {u : u'Su + 2b'u + c <= 0}, S > 0."""
    def q(u):
        return float(u @ S @ u + 2 * b @ u + c)

    if q(u_ext) <= 0:
        return u_ext.copy()

    def point(lam):
        return np.linalg.solve(np.eye(2) + lam * 2 * S, u_ext - lam * 2 * b)

    lo, hi = 0.0, 1.0
    while q(point(hi)) > 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if q(point(mid)) > 0:
            lo = mid
        else:
            hi = mid
    return point(hi)


def test_wide_box_projection_matches_analytic_slice():
    # with state constraints far away the closed-form slice is exact, so
    # projecting onto it analytically gives an independent oracle
    cfg = wide_box_config()
    x = np.array([0.5, -0.5])
    nom = solve_nominal(cfg, x)
    a, M = 0.95, 2
    u_ext = np.array([0.9, 0.8])
    res = filter_command(cfg, x, u_ext, nom, a=a, M=M)
    assert_filter_invariants(cfg, res, nom, M)
    lifted = build_lifted(cfg.model.A, cfg.model.B, cfg.cost.Q, cfg.cost.R,
                          cfg.cost.P_f, terminal_gain(cfg), M, a)
    q_tilde, S, b, c = fit_slice_quadratic(lifted, x)
    assert np.all(np.linalg.eigvalsh(S) > 0)
    u_star = project_onto_ellipse(u_ext, S, b, c)
    # the oracle ignores every box: check none of them binds at u_star,
    # otherwise the slice and the true set differ here
    assert cfg.U.contains(u_star, tol=-1e-6)
    tail = np.linalg.solve(cfg.model.B,
                           nom.z_star[2] - cfg.model.A
                           @ (cfg.model.A @ x + cfg.model.B @ u_star))
    assert cfg.U.contains(tail, tol=-1e-6)
    assert np.max(np.abs(res.u_applied - u_star)) <= 1e-6
    assert abs(np.sqrt(res.distortion)
               - np.linalg.norm(u_ext - u_star)) <= 1e-6
    # dense-grid fallback oracle: nearest member lattice point can only
    # overshoot the true distance by about one cell diagonal
    axis = np.linspace(-1.0, 1.0, 401)
    uu1, uu2 = np.meshgrid(axis, axis, indexing="ij")
    cells = np.column_stack([uu1.ravel(), uu2.ravel()])
    members = cells[q_tilde(cells) <= 1e-9]
    d_grid = np.min(np.linalg.norm(members - u_ext, axis=1))
    diag = np.sqrt(2) * (axis[1] - axis[0])
    assert -1e-9 <= d_grid - np.linalg.norm(u_ext - u_star) <= diag


def test_analytic_slice_invalid_when_state_boxes_bind():
    # at the case-study corner the state boxes cut deep into the slice;
    # projecting onto the unconstrained slice lands far from the filter
    cfg = case1_config()
    x = np.array([2.0, -2.0])
    nom = solve_nominal(cfg, x)
    a, M = 0.95, 2
    u_ext = np.array([-1.2 * np.cos(0.2), -0.2])
    res = filter_command(cfg, x, u_ext, nom, a=a, M=M)
    lifted = build_lifted(cfg.model.A, cfg.model.B, cfg.cost.Q, cfg.cost.R,
                          cfg.cost.P_f, terminal_gain(cfg), M, a)
    axis = np.linspace(-1.0, 1.0, 201)
    best_u, best_d = None, np.inf
    for a1 in axis:
        for a2 in axis:
            u0 = np.array([a1, a2])
            if closed_form_membership(lifted, x, u0):
                d = float(np.linalg.norm(u_ext - u0))
                if d < best_d:
                    best_u, best_d = u0, d
    assert best_u is not None
    assert np.linalg.norm(best_u - res.u_applied) > 0.5
    # and the slice point it prefers is not actually a member
    assert s2_membership(cfg, x, best_u, nom, a=a, M=M) is False


def test_membership_rejects_inputs_outside_u():
    cfg = case1_config()
    x = np.array([1.0, -1.0])
    nom = solve_nominal(cfg, x)
    assert s2_membership(cfg, x, np.array([1.2, 0.0]), nom, a=100.0, M=2) is False


def test_unicycle_filter_matches_slsqp():
    cfg = case3_config()
    x = np.array([0.2, 0.1, -0.3])
    nom = solve_nominal(cfg, x)
    u_ext = np.array([8.0, -2.0])
    res = filter_command(cfg, x, u_ext, nom, a=100.0, M=5)
    assert_filter_invariants(cfg, res, nom, 5)
    assert not res.used_fallback
    ref = slsqp_projection(cfg, x, u_ext, nom, 100.0, 5)
    assert ref is not None
    assert res.distortion <= ref[0] + 1e-5 * max(1.0, ref[0])


def test_unicycle_a_zero_reduces_to_nominal():
    cfg = case3_config()
    x = np.array([0.2, 0.1, -0.3])
    nom = solve_nominal(cfg, x)
    res = filter_command(cfg, x, np.array([5.0, 5.0]), nom, a=0.0, M=5)
    assert_filter_invariants(cfg, res, nom, 5)
    got = segment_cost(cfg, res.x_traj, res.u_stack, 5)
    want = segment_cost(cfg, nom.z_star, nom.v_star, 5)
    assert abs(got - want) <= 1e-6
    assert np.max(np.abs(res.u_applied - nom.v_star[0])) <= 1e-4


def test_unicycle_membership_against_slsqp():
    cfg = case3_config()
    x = np.array([0.2, 0.1, -0.3])
    nom = solve_nominal(cfg, x)
    assert s2_membership(cfg, x, nom.v_star[0], nom, a=0.5, M=5) is True
    rng = np.random.default_rng(5)
    agreements = 0
    for k in range(12):
        # half the draws stay near the nominal action where members live
        span = 1.5 if k % 2 else 10.0
        u0 = rng.uniform(-span, span, size=2)
        mine = s2_membership(cfg, x, u0, nom, a=0.5, M=5)
        ref = slsqp_membership(cfg, x, u0, nom, 0.5, 5)
        if ref is None or mine is None:
            continue
        assert mine == ref
        agreements += 1
    assert agreements >= 8


def test_boundary_polyline_of_square_block():
    u1 = np.linspace(0.0, 4.0, 5)
    u2 = np.linspace(0.0, 4.0, 5)
    vals = np.zeros((5, 5), dtype=np.int8)
    vals[1:3, 1:3] = 1
    lines = boundary_polylines(u1, u2, vals)
    assert len(lines) == 1
    loop = lines[0]
    assert np.max(np.abs(loop[0] - loop[-1])) <= 1e-12
    assert len(loop) >= 8
    assert np.all(loop[:, 0] >= 0.5 - 1e-12)
    assert np.all(loop[:, 0] <= 2.5 + 1e-12)


def test_filter_rejects_bad_arguments():
    cfg = case1_config()
    x = np.array([1.0, -1.0])
    nom = solve_nominal(cfg, x)
    with pytest.raises(ValueError):
        filter_command(cfg, x, np.zeros(2), nom, a=-0.1, M=2)
    with pytest.raises(ValueError):
        filter_command(cfg, x, np.zeros(2), nom, a=0.95, M=6)
    bad = solve_nominal(cfg, np.array([2.5, 0.0]))
    with pytest.raises(ValueError):
        filter_command(cfg, x, np.zeros(2), bad, a=0.95, M=2)
