import { describe, expect, it } from "vitest";

import {
  EMIT_INTERVAL_MS,
  EXPLOITATION_A,
  EXPLORATION_A,
  InputLoop,
} from "../src/input.js";

function loop(): InputLoop {
  return new InputLoop({
    vStep: 1,
    omegaStep: 1,
    uLower: [-10, -10],
    uUpper: [10, 10],
  });
}

describe("InputLoop", () => {
  it("ramps while a key is held and clamps at the bound", () => {
    const l = loop();
    l.keyDown("ArrowUp");
    for (let t = 0; t <= 2000; t += 16) l.tick(t);
    expect(l.command()[0]).toBe(10);
    expect(l.command()[1]).toBe(0);
  });

  it("decays to exactly zero within half a second of release", () => {
    const l = loop();
    l.keyDown("ArrowUp");
    l.keyDown("ArrowLeft");
    let t = 0;
    for (; t <= 500; t += 16) l.tick(t);
    expect(l.command()[0]).toBeGreaterThan(0);
    l.keyUp("ArrowUp");
    l.keyUp("ArrowLeft");
    const releaseAt = t;
    for (; t <= releaseAt + 500; t += 16) l.tick(t);
    expect(l.command()).toEqual([0, 0]);
  });

  it("passes slider values through unchanged", () => {
    const l = loop();
    l.mode = "sliders";
    l.setSliders(10, -2.5);
    const msg = l.tick(0);
    expect(msg).toEqual({ type: "cmd", u: [10, -2.5] });
  });

  it("emits at most one command per interval", () => {
    const l = loop();
    const sent = [l.tick(0), l.tick(10), l.tick(20), l.tick(EMIT_INTERVAL_MS + 1)];
    expect(sent.filter((m) => m !== null)).toHaveLength(2);
  });

  it("emits nothing while disabled", () => {
    const l = loop();
    l.enabled = false;
    expect(l.tick(0)).toBeNull();
    expect(l.tick(1000)).toBeNull();
  });

  it("alternates the a presets on toggle", () => {
    const l = loop();
    expect(l.toggleA()).toEqual({ type: "set_a", a: EXPLOITATION_A });
    expect(l.toggleA()).toEqual({ type: "set_a", a: EXPLORATION_A });
    expect(l.toggleA().a).toBe(EXPLOITATION_A);
  });
});
