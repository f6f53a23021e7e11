/** Session state: the single source every render reads from.
 *
 * Frames only enter through apply(), which enforces the monotone-k
 * contract: a frame older than the one already rendered is dropped.
 * k = 0 is the documented restart signal (server reset or reconnect)
 * and clears the pose trail instead of being treated as stale.
 */

import type {
  ConfigFrame,
  ConnectionStatus,
  InputMode,
  TelemetryFrame,
} from "./types.js";

export const TRAIL_CAPACITY = 500;

export class RingBuffer<T> {
  private items: T[] = [];
  private head = 0;

  constructor(readonly capacity: number) {}

  push(item: T): void {
    if (this.items.length < this.capacity) {
      this.items.push(item);
      return;
    }
    this.items[this.head] = item;
    this.head = (this.head + 1) % this.capacity;
  }

  clear(): void {
    this.items = [];
    this.head = 0;
  }

  get length(): number {
    return this.items.length;
  }

  /** Oldest to newest. */
  toArray(): T[] {
    return [...this.items.slice(this.head), ...this.items.slice(0, this.head)];
  }
}

export class SessionState {
  latest: TelemetryFrame | null = null;
  config: ConfigFrame | null = null;
  connection: ConnectionStatus = "connecting";
  inputMode: InputMode = "keyboard";
  aSlider = 100;
  lastError: string | null = null;
  readonly trail = new RingBuffer<number[]>(TRAIL_CAPACITY);

  /** Returns true when the frame was accepted for rendering. */
  apply(frame: TelemetryFrame): boolean {
    if (this.latest !== null && frame.k <= this.latest.k) {
      if (frame.k !== 0) return false;
      this.trail.clear();
    }
    this.latest = frame;
    this.trail.push(frame.x);
    return true;
  }

  applyConfig(frame: ConfigFrame): void {
    this.config = frame;
    const [lo] = frame.a_range;
    this.aSlider = Math.min(Math.max(this.aSlider, lo), frame.a_range[1]);
  }
}
