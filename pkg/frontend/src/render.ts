/** Scene construction for the two views.
 *
 * Rendering is split in two: these functions build plain-data scenes
 * from session state (pure, snapshot-testable), and paint.ts walks a
 * scene onto a canvas context. Every pose in a scene originates from a
 * received frame; nothing is extrapolated.
 */

import { SessionState } from "./state.js";
import { Viewport, makeViewport, scaleOf, worldToCanvas } from "./transform.js";

export type Shape =
  | { kind: "rect"; id: string; x: number; y: number; w: number; h: number; stroke: string; fill?: string }
  | { kind: "polyline"; id: string; points: [number, number][]; stroke: string }
  | { kind: "polygon"; id: string; points: [number, number][]; stroke: string; fill?: string }
  | { kind: "circle"; id: string; x: number; y: number; r: number; stroke: string; fill?: string }
  | { kind: "arrow"; id: string; from: [number, number]; to: [number, number]; stroke: string }
  | { kind: "text"; id: string; x: number; y: number; text: string; fill: string };

export type Scene = Shape[];

const COLORS = {
  box: "#445",
  trail: "#7aa2f7",
  robot: "#2ac3a2",
  alarm: "#e0443e",
  goal: "#caa24a",
  boundary: "#9d7cd8",
  raw: "#e0443e",
  filtered: "#2a6fc3",
};

const ROBOT_RADIUS = 10;

export interface ArenaOptions {
  width: number;
  height: number;
  goal?: [number, number];
}

function boxShape(id: string, v: Viewport, lo: [number, number], hi: [number, number], stroke: string): Shape {
  const [x0, y1] = worldToCanvas(v, lo);
  const [x1, y0] = worldToCanvas(v, hi);
  return { kind: "rect", id, x: x0, y: y0, w: x1 - x0, h: y1 - y0, stroke };
}

export function arenaViewport(state: SessionState, opts: ArenaOptions): Viewport {
  const cfg = state.config;
  const lo: [number, number] = cfg ? [cfg.X_lower[0]!, cfg.X_lower[1]!] : [-1, -1];
  const hi: [number, number] = cfg ? [cfg.X_upper[0]!, cfg.X_upper[1]!] : [1, 1];
  return makeViewport(lo, hi, opts.width, opts.height);
}

export function renderArena(state: SessionState, opts: ArenaOptions): Scene {
  const scene: Scene = [];
  const v = arenaViewport(state, opts);
  const cfg = state.config;
  if (cfg) {
    scene.push(boxShape("constraint-box", v,
      [cfg.X_lower[0]!, cfg.X_lower[1]!],
      [cfg.X_upper[0]!, cfg.X_upper[1]!], COLORS.box));
  }
  const goal = opts.goal ?? [0, 0];
  scene.push({
    kind: "circle", id: "goal",
    x: worldToCanvas(v, goal)[0], y: worldToCanvas(v, goal)[1],
    r: 5, stroke: COLORS.goal,
  });

  const trail = state.trail.toArray();
  if (trail.length > 0) {
    scene.push({
      kind: "polyline", id: "trail",
      points: trail.map((p) => worldToCanvas(v, [p[0]!, p[1]!])),
      stroke: COLORS.trail,
    });
  }

  const frame = state.latest;
  if (frame) {
    const alarm = frame.margins.min < 0;
    const pose: [number, number] = [frame.x[0]!, frame.x[1]!];
    const theta = frame.x.length > 2 ? frame.x[2]! : 0;
    const c = worldToCanvas(v, pose);
    // heading triangle in pixel space; canvas y points down, so the
    // world angle is negated
    const tip = -theta;
    const pts: [number, number][] = [tip, tip + (5 * Math.PI) / 6, tip - (5 * Math.PI) / 6]
      .map((ang, i) => {
        const r = i === 0 ? ROBOT_RADIUS * 1.6 : ROBOT_RADIUS;
        return [c[0] + r * Math.cos(ang), c[1] + r * Math.sin(ang)] as [number, number];
      });
    scene.push({
      kind: "polygon", id: "robot", points: pts,
      stroke: alarm ? COLORS.alarm : COLORS.robot,
      fill: alarm ? COLORS.alarm : COLORS.robot,
    });
    if (alarm) {
      scene.push({
        kind: "text", id: "alarm-banner", x: 0.5 * opts.width, y: 18,
        text: "CONSTRAINT VIOLATION", fill: COLORS.alarm,
      });
    }
  }
  return scene;
}

export interface CommandOptions {
  width: number;
  height: number;
}

export function commandViewport(state: SessionState, opts: CommandOptions): Viewport {
  const cfg = state.config;
  const lo: [number, number] = cfg ? [cfg.U_lower[0]!, cfg.U_lower[1]!] : [-1, -1];
  const hi: [number, number] = cfg ? [cfg.U_upper[0]!, cfg.U_upper[1]!] : [1, 1];
  // a third of the box as margin keeps out-of-U commands on screen
  const mx = (hi[0] - lo[0]) / 3;
  const my = (hi[1] - lo[1]) / 3;
  return makeViewport([lo[0] - mx, lo[1] - my], [hi[0] + mx, hi[1] + my],
    opts.width, opts.height);
}

export function renderCommandSpace(state: SessionState, opts: CommandOptions): Scene {
  const scene: Scene = [];
  const v = commandViewport(state, opts);
  const cfg = state.config;
  if (cfg) {
    scene.push(boxShape("input-box", v,
      [cfg.U_lower[0]!, cfg.U_lower[1]!],
      [cfg.U_upper[0]!, cfg.U_upper[1]!], COLORS.box));
  }
  const frame = state.latest;
  if (!frame) return scene;

  const boundary = frame.s2_boundary;
  if (boundary.length >= 3) {
    scene.push({
      kind: "polygon", id: "s2-boundary",
      points: boundary.map((p) => worldToCanvas(v, p)),
      stroke: COLORS.boundary,
    });
  } else if (boundary.length > 0) {
    const p = worldToCanvas(v, boundary[0]!);
    scene.push({ kind: "circle", id: "s2-point", x: p[0], y: p[1], r: 3, stroke: COLORS.boundary, fill: COLORS.boundary });
  }

  const raw = worldToCanvas(v, [frame.u_ext[0]!, frame.u_ext[1]!]);
  const filtered = worldToCanvas(v, [frame.u_applied[0]!, frame.u_applied[1]!]);
  scene.push({ kind: "arrow", id: "projection-arrow", from: raw, to: filtered, stroke: COLORS.filtered });
  scene.push({ kind: "circle", id: "cmd-raw", x: raw[0], y: raw[1], r: 5, stroke: COLORS.raw });
  scene.push({ kind: "rect", id: "cmd-filtered", x: filtered[0] - 4, y: filtered[1] - 4, w: 8, h: 8, stroke: COLORS.filtered, fill: COLORS.filtered });
  return scene;
}

export { scaleOf };
