"""Wire types of the service boundary.

Telemetry frames and inbound teleop messages are newline-delimited JSON;
REST payloads use the same field names as the run summaries so a client
can consume either without translation.
"""

from __future__ import annotations

from typing import List, Literal, Optional, Union

from pydantic import BaseModel, Field

SCHEMA = "ps2f-log-v1"


class HealthResponse(BaseModel):
    status: Literal["ok"]
    version: str


class DareResponse(BaseModel):
    P: List[List[float]]
    K: List[List[float]]
    gamma: float


class RunCase1Request(BaseModel):
    steps: int = Field(default=100, ge=1, le=2000)
    a: float = Field(default=0.95, ge=0.0)
    M: int = Field(default=2, ge=1)
    assertions: bool = True


class RunCase3Request(BaseModel):
    variant: Literal["ps2f", "baseline"] = "ps2f"
    Ks: int = Field(default=30, ge=0)
    steps: int = Field(default=150, ge=1, le=2000)
    assertions: bool = True


class RunSummary(BaseModel):
    schema_version: str = SCHEMA
    ok: bool
    case: str
    steps: int
    violations: int
    min_margin: float
    fallback_steps: int
    final_state: Optional[List[float]] = None
    final_state_norm: Optional[float] = None
    max_decrease_slack: Optional[float] = None
    failed_invariant: Optional[str] = None


class SweepRequest(BaseModel):
    grid: int = Field(default=41, ge=5, le=301)
    # parameter name -> swept values; defaults reproduce the four
    # standard sweeps when omitted
    sweeps: Optional[List[tuple]] = None


class SweepEntryModel(BaseModel):
    parameter: str
    value: float
    feasible: bool
    member_count: int
    boundary: List[List[List[float]]]


class SweepResponse(BaseModel):
    grid: int
    entries: List[SweepEntryModel]


class MarginsModel(BaseModel):
    x: List[float]
    u: List[float]
    min: float


class TelemetryFrame(BaseModel):
    type: Literal["frame"] = "frame"
    k: int
    t_wall: float
    x: List[float]
    u_ext: List[float]
    u_applied: List[float]
    used_fallback: bool
    V: Optional[float] = None
    a: float
    M: int
    s2_boundary: List[List[float]]
    margins: MarginsModel


class ConfigFrame(BaseModel):
    """Sent once after connect so the client can draw the arena."""

    type: Literal["config"] = "config"
    case: str
    X_lower: List[float]
    X_upper: List[float]
    U_lower: List[float]
    U_upper: List[float]
    Ts: Optional[float] = None
    a_range: List[float]


class ErrorFrame(BaseModel):
    type: Literal["error"] = "error"
    message: str


class CmdMessage(BaseModel):
    type: Literal["cmd"]
    u: List[float]


class SetAMessage(BaseModel):
    type: Literal["set_a"]
    a: float


class PauseMessage(BaseModel):
    type: Literal["pause"]


class ResetMessage(BaseModel):
    type: Literal["reset"]
    x: List[float]


InboundMessage = Union[CmdMessage, SetAMessage, PauseMessage, ResetMessage]
