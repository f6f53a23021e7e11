"""Session engine for live teleoperation.

One session owns the plant state and steps it at simulation rate: solve
nominal, filter the latest human command, propagate, emit a telemetry
frame. Message application and ticking happen on the same logical
worker, so the session itself needs no locks; the channel object is the
last-value-wins handoff from the I/O side.
"""

from __future__ import annotations

import time
from typing import List, Optional

import numpy as np

from ps2f.filter import filter as apply_filter, sample_s2_set
from ps2f.nominal import solve_nominal
from ps2f.simulate import shifted_stack
from ps2f.types import ModeSchedule, Ps2fConfig

Array = np.ndarray

MAX_BOUNDARY_VERTICES = 64


class LatestCommand:
    """Single-producer single-consumer cell; writes overwrite."""

    def __init__(self):
        self._value: Optional[Array] = None

    def set(self, u) -> None:
        self._value = np.asarray(u, dtype=float)

    def latest(self) -> Optional[Array]:
        return self._value


def downsample_polyline(line: Array, limit: int = MAX_BOUNDARY_VERTICES) -> Array:
    if len(line) <= limit:
        return line
    idx = np.linspace(0, len(line) - 1, limit).round().astype(int)
    return line[idx]


class TeleopSession:
    def __init__(self, cfg: Ps2fConfig, schedule: ModeSchedule, case: str,
                 boundary_every: int = 10, boundary_resolution: int = 13):
        self.cfg = cfg
        self.schedule = schedule
        self.case = case
        self.boundary_every = max(1, boundary_every)
        self.boundary_resolution = boundary_resolution
        self.channel = LatestCommand()
        self.x = np.zeros(cfg.model.state_dim)
        self.k = 0
        self.paused = False
        self.a_override: Optional[float] = None
        self._warm = None
        self._boundary: List[List[float]] = []

    def current_a(self) -> float:
        return (self.a_override if self.a_override is not None
                else self.schedule.a_at(self.k))

    def apply_message(self, msg: dict) -> Optional[str]:
        """Mutates the session; returns an error string for bad input."""
        kind = msg.get("type")
        if kind == "cmd":
            u = msg.get("u")
            if (not isinstance(u, (list, tuple))
                    or len(u) != self.cfg.model.input_dim
                    or not all(isinstance(v, (int, float))
                               and np.isfinite(v) for v in u)):
                return "cmd needs a finite numeric u of input dimension"
            self.channel.set(u)
            return None
        if kind == "set_a":
            a = msg.get("a")
            if not isinstance(a, (int, float)) or not np.isfinite(a):
                return "set_a needs a finite number"
            lo, hi = self.schedule.a_range()
            self.a_override = float(min(max(a, lo), hi))
            return None
        if kind == "pause":
            self.paused = not self.paused
            return None
        if kind == "reset":
            x = msg.get("x")
            if (not isinstance(x, (list, tuple))
                    or len(x) != self.cfg.model.state_dim
                    or not all(isinstance(v, (int, float))
                               and np.isfinite(v) for v in x)):
                return "reset needs a finite numeric x of state dimension"
            if not self.cfg.X.contains(np.asarray(x, dtype=float), tol=0.0):
                return "reset state lies outside X"
            self.x = np.asarray(x, dtype=float)
            self.k = 0
            self._warm = None
            self._boundary = []
            return None
        return f"unknown message type: {kind!r}"

    def tick(self) -> Optional[dict]:
        """One simulation step; None while paused or on lost feasibility
        (the caller reports the latter through an error frame)."""
        if self.paused:
            return None
        nominal = solve_nominal(self.cfg, self.x, warm=self._warm)
        if not nominal.feasible:
            return None
        a_k = self.current_a()
        M_k = self.schedule.M_at(self.k)
        latest = self.channel.latest()
        u_ext = (np.zeros(self.cfg.model.input_dim) if latest is None
                 else latest)
        res = apply_filter(self.cfg, self.x, u_ext, nominal, a_k, M_k)
        if self.k % self.boundary_every == 0:
            self._boundary = self._sample_boundary(nominal, a_k, M_k)
        mx = self.cfg.X.margins(self.x)
        mu = self.cfg.U.margins(res.u_applied)
        frame = {
            "type": "frame",
            "k": self.k,
            "t_wall": time.time(),
            "x": [float(v) for v in self.x],
            "u_ext": [float(v) for v in u_ext],
            "u_applied": [float(v) for v in res.u_applied],
            "used_fallback": bool(res.used_fallback),
            "V": float(nominal.value),
            "a": float(a_k),
            "M": int(M_k),
            "s2_boundary": self._boundary,
            "margins": {
                "x": [float(v) for v in mx],
                "u": [float(v) for v in mu],
                "min": float(min(mx.min(), mu.min())),
            },
        }
        self._warm = shifted_stack(self.cfg, nominal, res, M_k)
        self.x = self.cfg.model.step(self.x, res.u_applied)
        self.k += 1
        return frame

    def _sample_boundary(self, nominal, a_k: float, M_k: int) -> List[List[float]]:
        if self.cfg.model.input_dim != 2 or self.boundary_resolution < 5:
            return []
        grid = sample_s2_set(self.cfg, self.x, nominal, a_k, M_k,
                             grid_resolution=self.boundary_resolution)
        if not grid.boundary:
            return []
        longest = max(grid.boundary, key=len)
        line = downsample_polyline(np.asarray(longest))
        return [[float(p[0]), float(p[1])] for p in line]

    def config_frame(self) -> dict:
        lo, hi = self.schedule.a_range()
        return {
            "type": "config",
            "case": self.case,
            "X_lower": [float(v) for v in self.cfg.X.lower],
            "X_upper": [float(v) for v in self.cfg.X.upper],
            "U_lower": [float(v) for v in self.cfg.U.lower],
            "U_upper": [float(v) for v in self.cfg.U.upper],
            "Ts": self.cfg.model.Ts if self.cfg.model.kind == "unicycle" else None,
            "a_range": [float(lo), float(hi)],
        }
