/** Pilot input: keyboard ramp or slider pass-through, release-to-zero.
 *
 * tick() is called from the render loop with the current time and
 * returns an outbound command at most once per emit interval. With no
 * key held the command ramps linearly back to zero and reaches it
 * within the decay window, so an idle pilot is indistinguishable from
 * a disconnected one.
 */

import type { ClientMessage, CmdMessage, InputMode, SetAMessage } from "./types.js";

export const EMIT_INTERVAL_MS = 1000 / 30;
export const DECAY_MS = 400;

export const EXPLORATION_A = 100;
export const EXPLOITATION_A = 0.5;

export interface InputConfig {
  vStep: number;
  omegaStep: number;
  uLower: [number, number];
  uUpper: [number, number];
}

export class InputLoop {
  mode: InputMode = "keyboard";
  enabled = true;
  private u: [number, number] = [0, 0];
  private slider: [number, number] = [0, 0];
  private held = new Set<string>();
  private lastEmit = -Infinity;
  private lastTick: number | null = null;
  private exploring = true;

  constructor(readonly cfg: InputConfig) {}

  keyDown(key: string): void {
    this.held.add(key);
  }

  keyUp(key: string): void {
    this.held.delete(key);
  }

  setSliders(v: number, omega: number): void {
    this.slider = [v, omega];
  }

  /** Alternates between the exploration and exploitation presets. */
  toggleA(): SetAMessage {
    this.exploring = !this.exploring;
    return { type: "set_a", a: this.exploring ? EXPLORATION_A : EXPLOITATION_A };
  }

  command(): [number, number] {
    return this.mode === "sliders" ? [...this.slider] : [...this.u];
  }

  tick(nowMs: number): CmdMessage | null {
    const dt = this.lastTick === null ? 0 : nowMs - this.lastTick;
    this.lastTick = nowMs;
    if (this.mode === "keyboard") this.step(dt);
    if (!this.enabled) return null;
    if (nowMs - this.lastEmit < EMIT_INTERVAL_MS) return null;
    this.lastEmit = nowMs;
    return { type: "cmd", u: this.command() };
  }

  private step(dtMs: number): void {
    const dirV = (this.held.has("ArrowUp") ? 1 : 0) - (this.held.has("ArrowDown") ? 1 : 0);
    const dirW = (this.held.has("ArrowLeft") ? 1 : 0) - (this.held.has("ArrowRight") ? 1 : 0);
    this.u[0] = this.ramp(this.u[0], dirV, this.cfg.vStep, dtMs, this.cfg.uLower[0], this.cfg.uUpper[0]);
    this.u[1] = this.ramp(this.u[1], dirW, this.cfg.omegaStep, dtMs, this.cfg.uLower[1], this.cfg.uUpper[1]);
  }

  private ramp(value: number, dir: number, step: number, dtMs: number, lo: number, hi: number): number {
    if (dir !== 0) {
      return Math.min(hi, Math.max(lo, value + dir * step * (dtMs / EMIT_INTERVAL_MS)));
    }
    // linear release-to-zero: from any admissible value the command is
    // exactly zero after DECAY_MS
    const amp = Math.max(Math.abs(lo), Math.abs(hi));
    const delta = amp * (dtMs / DECAY_MS);
    if (Math.abs(value) <= delta) return 0;
    return value - Math.sign(value) * delta;
  }
}

export function isClientMessage(msg: unknown): msg is ClientMessage {
  return typeof msg === "object" && msg !== null && "type" in msg;
}
