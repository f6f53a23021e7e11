import type { ConfigFrame, TelemetryFrame } from "../src/types.js";

export function frame(overrides: Partial<TelemetryFrame> = {}): TelemetryFrame {
  return {
    type: "frame",
    k: 0,
    t_wall: 0,
    x: [0, 0, 0],
    u_ext: [0, 0],
    u_applied: [0, 0],
    used_fallback: false,
    V: 1.0,
    a: 100,
    M: 5,
    s2_boundary: [],
    margins: { x: [0.5, 0.5, 1, 0.5, 0.5, 1], u: [10, 10, 10, 10], min: 0.5 },
    ...overrides,
  };
}

export function config(overrides: Partial<ConfigFrame> = {}): ConfigFrame {
  return {
    type: "config",
    case: "case3",
    X_lower: [-0.5, -0.5, -Math.PI / 3],
    X_upper: [0.5, 0.5, Math.PI / 3],
    U_lower: [-10, -10],
    U_upper: [10, 10],
    Ts: 0.2,
    a_range: [0.5, 100],
    ...overrides,
  };
}
