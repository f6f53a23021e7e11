import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { CASE3_BOUNDS, parseLogCsv, replayConfig } from "../src/replay.js";
import { arenaViewport, renderArena } from "../src/render.js";
import { SessionState } from "../src/state.js";
import { worldToCanvas } from "../src/transform.js";

const here = dirname(fileURLToPath(import.meta.url));
const FIXTURE = readFileSync(join(here, "fixtures", "case3.csv"), "utf8");
const OPTS = { width: 480, height: 480 };

function case3Session(): SessionState {
  const s = new SessionState();
  s.applyConfig(replayConfig("case3", CASE3_BOUNDS.xLower, CASE3_BOUNDS.xUpper,
    CASE3_BOUNDS.uLower, CASE3_BOUNDS.uUpper));
  return s;
}

describe("parseLogCsv", () => {
  it("reads the exported run back row for row", () => {
    const log = parseLogCsv(FIXTURE);
    expect(log.n).toBe(3);
    expect(log.m).toBe(2);
    expect(log.frames).toHaveLength(150);
    expect(log.frames[0]!.k).toBe(0);
    expect(log.frames.at(-1)!.k).toBe(149);
    expect(log.finalState).toHaveLength(3);
    expect(log.finalValue).not.toBeNull();
    for (const f of log.frames) expect(f.margins.min).toBeGreaterThanOrEqual(-1e-8);
  });

  it("rejects foreign schemas", () => {
    expect(() => parseLogCsv("# someone-elses-log\nk,x0\n")).toThrow(/ps2f-log-v1/);
  });

  it("maps a nan value function to null", () => {
    const text = [
      "# ps2f-log-v1",
      "k,x0,u_ext0,u0,V,a,M,stage_cost,margin_x_lo0,margin_x_hi0,margin_u_lo0,margin_u_hi0,nominal_status,filter_status,fallback,t_nominal_ms,t_filter_ms",
      "0,0.5,0.1,0.1,nan,nan,0,0.25,1.0,1.0,1.0,1.0,skipped,unfiltered,0,0.0,0.0",
    ].join("\n");
    const log = parseLogCsv(text);
    expect(log.frames[0]!.V).toBeNull();
    expect(Number.isNaN(log.frames[0]!.a)).toBe(true);
  });
});

describe("offline replay", () => {
  it("renders a trail whose endpoints match the CSV first and last rows exactly", () => {
    // independent read of the raw rows, bypassing the parser
    const lines = FIXTURE.split("\n").filter((l) => l && !l.startsWith("#"));
    const header = lines[0]!.split(",");
    const xCols = ["x0", "x1"].map((c) => header.indexOf(c));
    const rowXY = (line: string): [number, number] => {
      const cells = line.split(",");
      return [Number(cells[xCols[0]!]!), Number(cells[xCols[1]!]!)];
    };
    const firstXY = rowXY(lines[1]!);
    const lastXY = rowXY(lines.at(-1)!);

    const s = case3Session();
    const log = parseLogCsv(FIXTURE);
    for (const f of log.frames) expect(s.apply(f)).toBe(true);

    const scene = renderArena(s, OPTS);
    const trail = scene.find((sh) => sh.id === "trail");
    expect(trail?.kind).toBe("polyline");
    if (trail?.kind !== "polyline") return;
    expect(trail.points).toHaveLength(150);

    const v = arenaViewport(s, OPTS);
    expect(trail.points[0]).toEqual(worldToCanvas(v, firstXY));
    expect(trail.points.at(-1)).toEqual(worldToCanvas(v, lastXY));

    // spot checks along the path
    for (const j of [10, 42, 99, 128]) {
      expect(trail.points[j]).toEqual(worldToCanvas(v, rowXY(lines[j + 1]!)));
    }
  });

  it("replays through the same stale-drop contract as live frames", () => {
    const s = case3Session();
    const log = parseLogCsv(FIXTURE);
    s.apply(log.frames[5]!);
    expect(s.apply(log.frames[3]!)).toBe(false);
    expect(s.apply(log.frames[6]!)).toBe(true);
  });
});
