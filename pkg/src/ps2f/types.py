"""Domain types and standing-assumption validation.

Everything downstream (solvers, filter, harness, service) builds on the
immutable value objects defined here. Validation is report-returning so
callers decide whether a violated assumption is fatal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

Array = np.ndarray

_CONTROLLABILITY_RTOL = 1e-9
_MIN_EIG = 1e-10


def _as_matrix(v, rows: int, cols: int, name: str) -> Array:
    a = np.asarray(v, dtype=float)
    if a.shape != (rows, cols):
        raise ValueError(f"{name} must have shape {(rows, cols)}, got {a.shape}")
    return a


def _as_vector(v, dim: int, name: str) -> Array:
    a = np.asarray(v, dtype=float)
    if a.shape != (dim,):
        raise ValueError(f"{name} must have shape ({dim},), got {a.shape}")
    return a


def _is_symmetric(a: Array, tol: float = 1e-9) -> bool:
    return bool(np.allclose(a, a.T, atol=tol, rtol=0.0))


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time dynamics x+ = f(x, u).

    kind "linear" uses (A, B); kind "unicycle" uses forward-Euler
    kinematics with sampling time Ts and state (px, py, theta),
    input (v, omega); kind "custom" takes explicit callables.
    """

    kind: str
    state_dim: int
    input_dim: int
    A: Optional[Array] = None
    B: Optional[Array] = None
    Ts: Optional[float] = None
    f: Optional[Callable[[Array, Array], Array]] = None
    f_jac: Optional[Callable[[Array, Array], Tuple[Array, Array]]] = None

    def __post_init__(self):
        if self.kind not in ("linear", "unicycle", "custom"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError("state_dim and input_dim must be >= 1")
        if self.kind == "linear":
            if self.A is None or self.B is None:
                raise ValueError("linear model requires A and B")
            object.__setattr__(
                self, "A", _as_matrix(self.A, self.state_dim, self.state_dim, "A")
            )
            object.__setattr__(
                self, "B", _as_matrix(self.B, self.state_dim, self.input_dim, "B")
            )
        elif self.kind == "unicycle":
            if self.state_dim != 3 or self.input_dim != 2:
                raise ValueError("unicycle model has state_dim=3, input_dim=2")
            if self.Ts is None or self.Ts <= 0:
                raise ValueError("unicycle model requires Ts > 0")
        else:
            if self.f is None:
                raise ValueError("custom model requires f")

    def step(self, x: Array, u: Array) -> Array:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.kind == "linear":
            return self.A @ x + self.B @ u
        if self.kind == "unicycle":
            c, s = np.cos(x[2]), np.sin(x[2])
            return x + self.Ts * np.array([c * u[0], s * u[0], u[1]])
        return np.asarray(self.f(x, u), dtype=float)

    def jacobians(self, x: Array, u: Array) -> Tuple[Array, Array]:
        """Return (df/dx, df/du) at (x, u); finite differences for custom
        models without an explicit Jacobian callable."""
        if self.kind == "linear":
            return self.A.copy(), self.B.copy()
        if self.kind == "unicycle":
            c, s = np.cos(x[2]), np.sin(x[2])
            Fx = np.eye(3)
            Fx[0, 2] = -self.Ts * s * u[0]
            Fx[1, 2] = self.Ts * c * u[0]
            Fu = np.zeros((3, 2))
            Fu[0, 0] = self.Ts * c
            Fu[1, 0] = self.Ts * s
            Fu[2, 1] = self.Ts
            return Fx, Fu
        if self.f_jac is not None:
            Fx, Fu = self.f_jac(x, u)
            return np.asarray(Fx, dtype=float), np.asarray(Fu, dtype=float)
        return _fd_jacobians(self, x, u)

    def rollout(self, x0: Array, us: Array) -> Array:
        """Simulate len(us) steps; returns states stacked (len(us)+1, n)."""
        xs = np.empty((len(us) + 1, self.state_dim))
        xs[0] = np.asarray(x0, dtype=float)
        for i, u in enumerate(us):
            xs[i + 1] = self.step(xs[i], u)
        return xs


def _fd_jacobians(model: SystemModel, x: Array, u: Array, h: float = 1e-6):
    # central differences, step 1e-6
    n, m = model.state_dim, model.input_dim
    Fx = np.empty((n, n))
    Fu = np.empty((n, m))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        Fx[:, j] = (model.step(x + e, u) - model.step(x - e, u)) / (2 * h)
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        Fu[:, j] = (model.step(x, u + e) - model.step(x, u - e)) / (2 * h)
    return Fx, Fu


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box {z : lower <= z <= upper}, origin strictly inside."""

    lower: Array
    upper: Array

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same shape")
        if not np.all(lo < hi):
            raise ValueError("lower < upper must hold componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains_origin(self) -> bool:
        # C-set requirement: 0 strictly inside
        return bool(np.all(self.lower < 0.0) and np.all(self.upper > 0.0))

    def contains(self, z: Array, tol: float = 0.0) -> bool:
        z = np.asarray(z, dtype=float)
        return bool(np.all(z >= self.lower - tol) and np.all(z <= self.upper + tol))

    def margins(self, z: Array) -> Array:
        """Signed distance to each face, order (lo_0..lo_{d-1}, hi_0..hi_{d-1});
        negative means violated."""
        z = np.asarray(z, dtype=float)
        return np.concatenate([z - self.lower, self.upper - z])

    def faces(self) -> Tuple[Array, Array]:
        """Half-space form: rows h with h^T z <= c covering all 2d faces."""
        d = self.dim
        H = np.vstack([np.eye(d), -np.eye(d)])
        c = np.concatenate([self.upper, -self.lower])
        return H, c

    def clip(self, z: Array) -> Array:
        return np.clip(np.asarray(z, dtype=float), self.lower, self.upper)


@dataclass(frozen=True)
class TerminalSet:
    """Terminal constraint: ellipsoid {x : x^T P x <= gamma}, the origin
    (n equality constraints), or none."""

    kind: str
    P: Optional[Array] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("ellipsoid", "origin", "none"):
            raise ValueError(f"unknown terminal set kind {self.kind!r}")
        if self.kind == "ellipsoid":
            P = np.asarray(self.P, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1]:
                raise ValueError("ellipsoid P must be square")
            if not _is_symmetric(P):
                raise ValueError("ellipsoid P must be symmetric")
            if np.linalg.eigvalsh(P).min() <= _MIN_EIG:
                raise ValueError("ellipsoid P must be positive definite")
            if self.gamma is None or self.gamma <= 0:
                raise ValueError("ellipsoid gamma must be > 0")
            object.__setattr__(self, "P", P)
            object.__setattr__(self, "gamma", float(self.gamma))

    def contains(self, x: Array, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == "ellipsoid":
            return bool(x @ self.P @ x <= self.gamma + tol)
        if self.kind == "origin":
            return bool(np.max(np.abs(x)) <= tol)
        return True


@dataclass(frozen=True)
class QuadraticCost:
    """Stage cost l(x,u) = x^T Q x + u^T R u and terminal V_f(x) = x^T P_f x.

    No affine terms, so l(0,0) = 0 and V_f(0) = 0 by construction.
    """

    Q: Array
    R: Array
    P_f: Array

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        P_f = np.asarray(self.P_f, dtype=float)
        for name, mat in (("Q", Q), ("R", R), ("P_f", P_f)):
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"{name} must be square")
            if not _is_symmetric(mat):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(R).min() <= _MIN_EIG:
            raise ValueError("R must be positive definite")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(P_f).min() < -1e-12:
            raise ValueError("P_f must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P_f", P_f)

    def stage(self, x: Array, u: Array) -> float:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return float(x @ self.Q @ x + u @ self.R @ u)

    def terminal(self, x: Array) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P_f @ x)


@dataclass(frozen=True)
class Ps2fConfig:
    """Full problem description for one copilot/filter pair."""

    model: SystemModel
    N: int
    M: int
    a: float
    cost: QuadraticCost
    X: BoxSet
    U: BoxSet
    Xf: TerminalSet

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N >= 1 required")
        if not (1 <= self.M <= self.N):
            raise ValueError("1 <= M <= N required")
        if self.a < 0:
            raise ValueError("a >= 0 required")

    def replace(self, **kw) -> "Ps2fConfig":
        from dataclasses import replace as _replace

        return _replace(self, **kw)


@dataclass(frozen=True)
class ModeSchedule:
    """Piecewise-constant a(k), M(k) given as sorted (k_start, value) pairs.

    Ks is a convenience marker for two-phase schedules; it carries no
    semantics beyond labeling the switch index.
    """

    a_breaks: Tuple[Tuple[int, float], ...]
    M_breaks: Tuple[Tuple[int, int], ...]
    Ks: int = 0

    def __post_init__(self):
        for name, breaks in (("a_breaks", self.a_breaks), ("M_breaks", self.M_breaks)):
            if len(breaks) == 0:
                raise ValueError(f"{name} must be nonempty")
            ks = [k for k, _ in breaks]
            if ks[0] != 0 or any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])):
                raise ValueError(f"{name} must start at k=0 with increasing indices")
        if any(v < 0 for _, v in self.a_breaks):
            raise ValueError("a(k) >= 0 required")
        if any(v < 1 for _, v in self.M_breaks):
            raise ValueError("M(k) >= 1 required")
        object.__setattr__(self, "a_breaks", tuple((int(k), float(v)) for k, v in self.a_breaks))
        object.__setattr__(self, "M_breaks", tuple((int(k), int(v)) for k, v in self.M_breaks))

    @staticmethod
    def constant(a: float, M: int) -> "ModeSchedule":
        return ModeSchedule(a_breaks=((0, a),), M_breaks=((0, M),), Ks=0)

    @staticmethod
    def two_phase(a_explore: float, a_settle: float, Ks: int, M: int) -> "ModeSchedule":
        if Ks <= 0:
            return ModeSchedule(a_breaks=((0, a_settle),), M_breaks=((0, M),), Ks=0)
        return ModeSchedule(
            a_breaks=((0, a_explore), (Ks, a_settle)), M_breaks=((0, M),), Ks=Ks
        )

    def a_at(self, k: int) -> float:
        return _piecewise(self.a_breaks, k)

    def M_at(self, k: int) -> int:
        return int(_piecewise(self.M_breaks, k))

    def a_sup_after(self, k0: int) -> float:
        """sup_{k >= k0} a(k), for checking the settle-phase bound a <= 1 - abar."""
        vals = [v for k, v in self.a_breaks if k >= k0]
        vals.append(self.a_at(k0))
        return max(vals)

    def a_range(self) -> Tuple[float, float]:
        vals = [v for _, v in self.a_breaks]
        return min(vals), max(vals)


def _piecewise(breaks: Sequence[Tuple[int, float]], k: int):
    out = breaks[0][1]
    for k0, v in breaks:
        if k >= k0:
            out = v
        else:
            break
    return out


def validate_config(cfg: Ps2fConfig, K: Optional[Array] = None) -> list[str]:
    """Check the mechanizable standing assumptions; returns a list of
    violation strings, empty when the config is clean.

    With an LQR gain K supplied and an ellipsoid terminal set, the
    invariance inequality V_f(f(x,-Kx)) - V_f(x) <= -l(x,-Kx) is
    spot-checked on 1000 deterministic boundary points (tolerance 1e-8);
    the Riccati construction guarantees it analytically, so this is a
    regression guard only.
    """
    out: list[str] = []
    n, m = cfg.model.state_dim, cfg.model.input_dim
    if np.linalg.eigvalsh(cfg.cost.R).min() <= _MIN_EIG:
        out.append("R is not positive definite")
    if np.linalg.eigvalsh(cfg.cost.Q).min() < -1e-12:
        out.append("Q is not positive semidefinite")
    if cfg.X.dim != n:
        out.append("X dimension does not match state_dim")
    if cfg.U.dim != m:
        out.append("U dimension does not match input_dim")
    if not cfg.X.contains_origin():
        out.append("X is not a C-set: origin not strictly inside")
    if not cfg.U.contains_origin():
        out.append("U is not a C-set: origin not strictly inside")
    if cfg.M > cfg.N:
        out.append("M > N violates the horizon ordering")
    if cfg.model.kind == "linear":
        if not _controllable(cfg.model.A, cfg.model.B):
            out.append("(A, B) is not controllable")
    if cfg.Xf.kind == "ellipsoid" and K is not None:
        bad = _check_ellipsoid_invariance(cfg, np.asarray(K, dtype=float))
        if bad > 0:
            out.append(
                f"terminal ellipsoid invariance violated at {bad}/1000 boundary points"
            )
    return out


def _controllable(A: Array, B: Array) -> bool:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    C = np.hstack(blocks)
    sv = np.linalg.svd(C, compute_uv=False)
    return bool(sv.min() > _CONTROLLABILITY_RTOL * sv.max())


def _check_ellipsoid_invariance(cfg: Ps2fConfig, K: Array) -> int:
    P, gamma = cfg.Xf.P, cfg.Xf.gamma
    n = cfg.model.state_dim
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((1000, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # map unit directions onto the ellipsoid boundary x^T P x = gamma
    L = np.linalg.cholesky(P)
    pts = np.sqrt(gamma) * np.linalg.solve(L.T, dirs.T).T
    bad = 0
    for x in pts:
        u = -K @ x
        xp = cfg.model.step(x, u)
        lhs = cfg.cost.terminal(xp) - cfg.cost.terminal(x)
        if lhs > -cfg.cost.stage(x, u) + 1e-8:
            bad += 1
    return bad


# --- strict JSON round trip -------------------------------------------------

_MODEL_KEYS = {"kind", "state_dim", "input_dim", "A", "B", "Ts"}
_CONFIG_KEYS = {"model", "N", "M", "a", "cost", "X", "U", "Xf"}


def _reject_unknown(doc: dict, allowed: set, where: str):
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")


def config_from_json(doc: dict) -> Ps2fConfig:
    """Build a config from a plain-dict document (matrices are row-major
    nested lists). Unknown keys are rejected to catch typos."""
    _reject_unknown(doc, _CONFIG_KEYS, "config")
    mdoc = doc["model"]
    _reject_unknown(mdoc, _MODEL_KEYS, "model")
    model = SystemModel(
        kind=mdoc["kind"],
        state_dim=int(mdoc["state_dim"]),
        input_dim=int(mdoc["input_dim"]),
        A=np.asarray(mdoc["A"], dtype=float) if "A" in mdoc else None,
        B=np.asarray(mdoc["B"], dtype=float) if "B" in mdoc else None,
        Ts=float(mdoc["Ts"]) if "Ts" in mdoc else None,
    )
    cdoc = doc["cost"]
    _reject_unknown(cdoc, {"Q", "R", "P_f"}, "cost")
    cost = QuadraticCost(
        Q=np.asarray(cdoc["Q"], dtype=float),
        R=np.asarray(cdoc["R"], dtype=float),
        P_f=np.asarray(cdoc["P_f"], dtype=float),
    )
    xdoc, udoc = doc["X"], doc["U"]
    _reject_unknown(xdoc, {"lower", "upper"}, "X")
    _reject_unknown(udoc, {"lower", "upper"}, "U")
    fdoc = doc["Xf"]
    _reject_unknown(fdoc, {"kind", "P", "gamma"}, "Xf")
    Xf = TerminalSet(
        kind=fdoc["kind"],
        P=np.asarray(fdoc["P"], dtype=float) if "P" in fdoc else None,
        gamma=float(fdoc["gamma"]) if "gamma" in fdoc else None,
    )
    return Ps2fConfig(
        model=model,
        N=int(doc["N"]),
        M=int(doc["M"]),
        a=float(doc["a"]),
        cost=cost,
        X=BoxSet(np.asarray(xdoc["lower"], dtype=float), np.asarray(xdoc["upper"], dtype=float)),
        U=BoxSet(np.asarray(udoc["lower"], dtype=float), np.asarray(udoc["upper"], dtype=float)),
        Xf=Xf,
    )


def config_to_json(cfg: Ps2fConfig) -> dict:
    mdoc: dict = {
        "kind": cfg.model.kind,
        "state_dim": cfg.model.state_dim,
        "input_dim": cfg.model.input_dim,
    }
    if cfg.model.kind == "linear":
        mdoc["A"] = cfg.model.A.tolist()
        mdoc["B"] = cfg.model.B.tolist()
    if cfg.model.kind == "unicycle":
        mdoc["Ts"] = cfg.model.Ts
    fdoc: dict = {"kind": cfg.Xf.kind}
    if cfg.Xf.kind == "ellipsoid":
        fdoc["P"] = cfg.Xf.P.tolist()
        fdoc["gamma"] = cfg.Xf.gamma
    return {
        "model": mdoc,
        "N": cfg.N,
        "M": cfg.M,
        "a": cfg.a,
        "cost": {
            "Q": cfg.cost.Q.tolist(),
            "R": cfg.cost.R.tolist(),
            "P_f": cfg.cost.P_f.tolist(),
        },
        "X": {"lower": cfg.X.lower.tolist(), "upper": cfg.X.upper.tolist()},
        "U": {"lower": cfg.U.lower.tolist(), "upper": cfg.U.upper.tolist()},
        "Xf": fdoc,
    }
