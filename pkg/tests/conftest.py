"""Shared config builders for the test suite."""

import numpy as np

from ps2f.cases import case1_config, case3_config  # noqa: F401
from ps2f.linear import max_ellipsoid_level, solve_dare
from ps2f.types import BoxSet, Ps2fConfig, QuadraticCost, SystemModel, TerminalSet


def wide_box_config():
    """Case 1 dynamics with state constraints pushed far out, so only the
    input box and the terminal ellipsoid shape the feasible set."""
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.eye(2)
    Q = 10.0 * np.eye(2)
    R = np.eye(2)
    r = solve_dare(A, B, Q, R)
    X = BoxSet(-50 * np.ones(2), 50 * np.ones(2))
    U = BoxSet(-np.ones(2), np.ones(2))
    gamma = max_ellipsoid_level(r.P, r.K, X, U)
    return Ps2fConfig(
        model=SystemModel(kind="linear", state_dim=2, input_dim=2, A=A, B=B),
        N=5, M=2, a=0.95,
        cost=QuadraticCost(Q=Q, R=R, P_f=r.P),
        X=X, U=U,
        Xf=TerminalSet(kind="ellipsoid", P=r.P, gamma=gamma),
    )
