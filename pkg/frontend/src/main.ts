/** Browser entry point: wires the socket, the pilot input, and the two
 * canvases into one render loop. Live and replay modes share the same
 * session state and scene builders.
 */

import { InputLoop } from "./input.js";
import { paint } from "./paint.js";
import { parseLogCsv, replayConfig, CASE3_BOUNDS } from "./replay.js";
import { renderArena, renderCommandSpace } from "./render.js";
import { SessionState } from "./state.js";
import { TeleopClient } from "./ws.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function start(): void {
  const arena = el<HTMLCanvasElement>("arena");
  const command = el<HTMLCanvasElement>("command");
  const status = el<HTMLSpanElement>("status");
  const kLabel = el<HTMLSpanElement>("k");
  const aLabel = el<HTMLSpanElement>("a");
  const errors = el<HTMLDivElement>("errors");

  const state = new SessionState();
  let replayFrames: ReturnType<typeof parseLogCsv>["frames"] | null = null;
  let replayIndex = 0;

  const url = `ws://${location.host}/ws/teleop?case=case3`;
  const client = new TeleopClient(url, {
    onConfig: (cfg) => state.applyConfig(cfg),
    onStatus: (s) => {
      state.connection = s;
      status.textContent = s;
      input.enabled = s === "open";
    },
    onError: (message) => {
      errors.textContent = message;
    },
  });

  const input = new InputLoop({
    vStep: 1.0,
    omegaStep: 1.0,
    uLower: [-10, -10],
    uUpper: [10, 10],
  });

  window.addEventListener("keydown", (ev) => input.keyDown(ev.key));
  window.addEventListener("keyup", (ev) => input.keyUp(ev.key));
  el<HTMLButtonElement>("toggle-a").addEventListener("click", () => {
    client.send(input.toggleA());
  });
  el<HTMLButtonElement>("pause").addEventListener("click", () => {
    client.send({ type: "pause" });
  });
  el<HTMLButtonElement>("reset").addEventListener("click", () => {
    client.send({ type: "reset", x: [0, 0, 0] });
  });
  el<HTMLInputElement>("mode").addEventListener("change", (ev) => {
    input.mode = (ev.target as HTMLInputElement).checked ? "sliders" : "keyboard";
    state.inputMode = input.mode;
  });
  const vSlider = el<HTMLInputElement>("v-slider");
  const wSlider = el<HTMLInputElement>("w-slider");
  const syncSliders = () =>
    input.setSliders(Number(vSlider.value), Number(wSlider.value));
  vSlider.addEventListener("input", syncSliders);
  wSlider.addEventListener("input", syncSliders);

  el<HTMLInputElement>("replay-file").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const log = parseLogCsv(await file.text());
    state.applyConfig(replayConfig("replay", CASE3_BOUNDS.xLower,
      CASE3_BOUNDS.xUpper, CASE3_BOUNDS.uLower, CASE3_BOUNDS.uUpper));
    state.trail.clear();
    state.latest = null;
    replayFrames = log.frames;
    replayIndex = 0;
    client.close();
  });

  client.connect();

  const actx = arena.getContext("2d")!;
  const cctx = command.getContext("2d")!;

  const loop = (now: number) => {
    if (replayFrames !== null) {
      if (replayIndex < replayFrames.length) {
        state.apply(replayFrames[replayIndex]!);
        replayIndex += 1;
      }
    } else {
      const frame = client.drain();
      if (frame) state.apply(frame);
      const cmd = input.tick(now);
      if (cmd) client.send(cmd);
    }
    if (state.latest) {
      kLabel.textContent = String(state.latest.k);
      aLabel.textContent = state.latest.a.toFixed(2);
    }
    paint(actx, renderArena(state, { width: arena.width, height: arena.height }),
      arena.width, arena.height);
    paint(cctx, renderCommandSpace(state, { width: command.width, height: command.height }),
      command.width, command.height);
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", start);
}
