/** Offline replay of exported ps2f-log-v1 CSV logs.
 *
 * Parsed rows are rehydrated into telemetry frames so the replay path
 * and the live path share every downstream stage (state, scenes). The
 * set boundary is not part of the log schema, so replayed frames carry
 * an empty polygon.
 */

import type { ConfigFrame, TelemetryFrame } from "./types.js";

export const LOG_SCHEMA = "ps2f-log-v1";

export interface ReplayLog {
  n: number;
  m: number;
  frames: TelemetryFrame[];
  finalState: number[] | null;
  finalValue: number | null;
}

function num(cell: string): number {
  if (cell === "nan") return NaN;
  if (cell === "inf") return Infinity;
  if (cell === "-inf") return -Infinity;
  const v = Number(cell);
  if (Number.isNaN(v) && cell !== "NaN") {
    throw new Error(`not a number: ${JSON.stringify(cell)}`);
  }
  return v;
}

export function parseLogCsv(text: string): ReplayLog {
  const lines = text.split("\n").filter((l) => l.length > 0);
  if (lines.length < 2 || lines[0] !== `# ${LOG_SCHEMA}`) {
    throw new Error(`not a ${LOG_SCHEMA} file`);
  }
  const cols = lines[1]!.split(",");
  const idx = new Map(cols.map((c, i) => [c, i]));
  const n = cols.filter((c) => /^x\d+$/.test(c)).length;
  const m = cols.filter((c) => c.startsWith("u_ext")).length;
  if (n === 0 || m === 0) throw new Error("header carries no state/input columns");

  const col = (cells: string[], name: string): string => {
    const i = idx.get(name);
    if (i === undefined || cells[i] === undefined) {
      throw new Error(`missing column ${name}`);
    }
    return cells[i]!;
  };

  const frames: TelemetryFrame[] = [];
  let finalState: number[] | null = null;
  let finalValue: number | null = null;
  for (const line of lines.slice(2)) {
    if (line.startsWith("# final_state,")) {
      finalState = line.split(",").slice(1).map(num);
      continue;
    }
    if (line.startsWith("# final_value,")) {
      finalValue = num(line.split(",")[1]!);
      continue;
    }
    if (line.startsWith("#")) continue;
    const cells = line.split(",");
    const range = (prefix: string, count: number) =>
      Array.from({ length: count }, (_, i) => num(col(cells, `${prefix}${i}`)));
    const marginsX = [...range("margin_x_lo", n), ...range("margin_x_hi", n)];
    const marginsU = [...range("margin_u_lo", m), ...range("margin_u_hi", m)];
    const V = num(col(cells, "V"));
    frames.push({
      type: "frame",
      k: Math.trunc(num(col(cells, "k"))),
      t_wall: 0,
      x: range("x", n),
      u_ext: range("u_ext", m),
      u_applied: range("u", m),
      used_fallback: col(cells, "fallback") === "1",
      V: Number.isNaN(V) ? null : V,
      a: num(col(cells, "a")),
      M: Math.trunc(num(col(cells, "M"))),
      s2_boundary: [],
      margins: {
        x: marginsX,
        u: marginsU,
        min: Math.min(...marginsX, ...marginsU),
      },
    });
  }
  return { n, m, frames, finalState, finalValue };
}

/** A config frame inferred from the margins of a replayed log is not
 * reconstructible (margins do not determine the box), so replay uses
 * the bounds the caller knows; the built-in cases are provided here. */
export function replayConfig(
  name: string,
  xLower: number[],
  xUpper: number[],
  uLower: number[],
  uUpper: number[],
): ConfigFrame {
  return {
    type: "config",
    case: name,
    X_lower: xLower,
    X_upper: xUpper,
    U_lower: uLower,
    U_upper: uUpper,
    Ts: null,
    a_range: [0, 100],
  };
}

export const CASE3_BOUNDS = {
  xLower: [-0.5, -0.5, -Math.PI / 3],
  xUpper: [0.5, 0.5, Math.PI / 3],
  uLower: [-10, -10],
  uUpper: [10, 10],
};
