"""Serialization for closed-loop logs, set grids, and run summaries.

CSV and JSONL carry the same row schema, tagged ps2f-log-v1. Floats are
written with repr so a read-back reproduces the run bit for bit; the two
wall-clock columns are the only fields expected to differ between
otherwise identical runs.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import List, Union

import numpy as np

from ps2f.filter import S2Grid
from ps2f.simulate import ClosedLoopLog, LogRow

Array = np.ndarray
PathLike = Union[str, Path]

LOG_SCHEMA = "ps2f-log-v1"
GRID_SCHEMA = "ps2f-grid-v1"
TIMING_COLUMNS = ("t_nominal_ms", "t_filter_ms")


def log_columns(n: int, m: int) -> List[str]:
    cols = ["k"]
    cols += [f"x{i}" for i in range(n)]
    cols += [f"u_ext{i}" for i in range(m)]
    cols += [f"u{i}" for i in range(m)]
    cols += ["V", "a", "M", "stage_cost"]
    cols += [f"margin_x_lo{i}" for i in range(n)]
    cols += [f"margin_x_hi{i}" for i in range(n)]
    cols += [f"margin_u_lo{i}" for i in range(m)]
    cols += [f"margin_u_hi{i}" for i in range(m)]
    cols += ["nominal_status", "filter_status", "fallback"]
    cols += list(TIMING_COLUMNS)
    return cols


def _row_values(row: LogRow) -> list:
    vals: list = [row.k]
    vals += [float(v) for v in row.x]
    vals += [float(v) for v in row.u_ext]
    vals += [float(v) for v in row.u]
    vals += [row.V, row.a, row.M, row.stage_cost]
    vals += [float(v) for v in row.margins_X]
    vals += [float(v) for v in row.margins_U]
    vals += [row.nominal_status, row.filter_status, int(row.used_fallback)]
    vals += [row.t_nominal_ms, row.t_filter_ms]
    return vals


def _cell(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_log_csv(log: ClosedLoopLog, path: PathLike) -> None:
    cols = log_columns(log.n, log.m)
    lines = [f"# {LOG_SCHEMA}", ",".join(cols)]
    for row in log.rows:
        lines.append(",".join(_cell(v) for v in _row_values(row)))
    if log.final_state is not None:
        tail = ",".join(repr(float(v)) for v in log.final_state)
        lines.append(f"# final_state,{tail}")
    if log.final_value is not None:
        lines.append(f"# final_value,{log.final_value!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _row_from_fields(fields: dict, n: int, m: int) -> LogRow:
    return LogRow(
        k=int(fields["k"]),
        x=np.array([fields[f"x{i}"] for i in range(n)], dtype=float),
        u_ext=np.array([fields[f"u_ext{i}"] for i in range(m)], dtype=float),
        u=np.array([fields[f"u{i}"] for i in range(m)], dtype=float),
        V=float(fields["V"]),
        a=float(fields["a"]),
        M=int(fields["M"]),
        stage_cost=float(fields["stage_cost"]),
        margins_X=np.array(
            [fields[f"margin_x_lo{i}"] for i in range(n)]
            + [fields[f"margin_x_hi{i}"] for i in range(n)], dtype=float),
        margins_U=np.array(
            [fields[f"margin_u_lo{i}"] for i in range(m)]
            + [fields[f"margin_u_hi{i}"] for i in range(m)], dtype=float),
        nominal_status=str(fields["nominal_status"]),
        filter_status=str(fields["filter_status"]),
        used_fallback=bool(int(fields["fallback"])),
        t_nominal_ms=float(fields["t_nominal_ms"]),
        t_filter_ms=float(fields["t_filter_ms"]),
    )


def _dims_from_columns(cols: List[str]) -> tuple:
    n = sum(1 for c in cols if c.startswith("x") and c[1:].isdigit())
    m = sum(1 for c in cols if c.startswith("u_ext"))
    return n, m


def read_log_csv(path: PathLike) -> ClosedLoopLog:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# {LOG_SCHEMA}":
        raise ValueError(f"not a {LOG_SCHEMA} file: {path}")
    cols = lines[1].split(",")
    n, m = _dims_from_columns(cols)
    log = ClosedLoopLog(n=n, m=m)
    for line in lines[2:]:
        if not line:
            continue
        if line.startswith("# final_state,"):
            vals = line.split(",")[1:]
            log.final_state = np.array([float(v) for v in vals])
            continue
        if line.startswith("# final_value,"):
            log.final_value = float(line.split(",")[1])
            continue
        fields = dict(zip(cols, line.split(",")))
        log.rows.append(_row_from_fields(fields, n, m))
    return log


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def write_log_jsonl(log: ClosedLoopLog, path: PathLike) -> None:
    cols = log_columns(log.n, log.m)
    lines = [json.dumps({"schema": LOG_SCHEMA, "n": log.n, "m": log.m})]
    for row in log.rows:
        rec = {c: _json_safe(v) for c, v in zip(cols, _row_values(row))}
        lines.append(json.dumps(rec))
    tail = {}
    if log.final_state is not None:
        tail["final_state"] = [float(v) for v in log.final_state]
    if log.final_value is not None:
        tail["final_value"] = log.final_value
    if tail:
        lines.append(json.dumps(tail))
    Path(path).write_text("\n".join(lines) + "\n")


def read_log_jsonl(path: PathLike) -> ClosedLoopLog:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln]
    head = json.loads(lines[0])
    if head.get("schema") != LOG_SCHEMA:
        raise ValueError(f"not a {LOG_SCHEMA} file: {path}")
    n, m = int(head["n"]), int(head["m"])
    log = ClosedLoopLog(n=n, m=m)
    for line in lines[1:]:
        rec = json.loads(line)
        if "k" not in rec:
            if "final_state" in rec:
                log.final_state = np.array(rec["final_state"], dtype=float)
            if "final_value" in rec:
                log.final_value = float(rec["final_value"])
            continue
        fields = {k: (float("nan") if v is None else v)
                  for k, v in rec.items()}
        log.rows.append(_row_from_fields(fields, n, m))
    return log


def write_boundary_json(grid: S2Grid, path: PathLike) -> None:
    """Member-region boundary as a list of polylines of [u1, u2] pairs."""
    data = [[[float(a), float(b)] for a, b in line] for line in grid.boundary]
    Path(path).write_text(json.dumps(data) + "\n")


def write_grid_csv(grid: S2Grid, path: PathLike) -> None:
    """Row-major membership values; row i fixes u1_axis[i]."""
    lines = [f"# {GRID_SCHEMA}",
             "# u1," + ",".join(repr(float(v)) for v in grid.u1_axis),
             "# u2," + ",".join(repr(float(v)) for v in grid.u2_axis)]
    for row in grid.values:
        lines.append(",".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path: PathLike) -> S2Grid:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# {GRID_SCHEMA}":
        raise ValueError(f"not a {GRID_SCHEMA} file: {path}")
    u1 = np.array([float(v) for v in lines[1].split(",")[1:]])
    u2 = np.array([float(v) for v in lines[2].split(",")[1:]])
    vals = np.array([[int(v) for v in ln.split(",")] for ln in lines[3:] if ln],
                    dtype=np.int8)
    from ps2f.filter import boundary_polylines

    return S2Grid(u1_axis=u1, u2_axis=u2, values=vals,
                  boundary=boundary_polylines(u1, u2, vals))


def summarize(log: ClosedLoopLog) -> dict:
    out = {
        "schema": LOG_SCHEMA,
        "steps": len(log.rows),
        "violations": log.violation_count(),
        "min_margin": log.min_margin(),
        "fallback_steps": sum(1 for r in log.rows if r.used_fallback),
    }
    if log.final_state is not None:
        out["final_state"] = [float(v) for v in log.final_state]
        out["final_state_norm"] = float(np.linalg.norm(log.final_state))
    slack = log.max_decrease_slack()
    out["max_decrease_slack"] = None if not math.isfinite(slack) else slack
    return out


def write_json(obj: dict, path: PathLike) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")
