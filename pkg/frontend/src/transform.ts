/** World-to-canvas coordinate mapping.
 *
 * A viewport pins a world box onto a pixel rect with uniform scale and
 * a flipped y axis. Kept free of rounding so replayed trajectories map
 * to exactly the same pixel coordinates as the rows they came from.
 */

export interface Viewport {
  worldLo: [number, number];
  worldHi: [number, number];
  width: number;
  height: number;
  pad: number;
}

export function makeViewport(
  lo: [number, number],
  hi: [number, number],
  width: number,
  height: number,
  pad = 24,
): Viewport {
  return { worldLo: lo, worldHi: hi, width, height, pad };
}

export function scaleOf(v: Viewport): number {
  const sx = (v.width - 2 * v.pad) / (v.worldHi[0] - v.worldLo[0]);
  const sy = (v.height - 2 * v.pad) / (v.worldHi[1] - v.worldLo[1]);
  return Math.min(sx, sy);
}

export function worldToCanvas(v: Viewport, p: [number, number]): [number, number] {
  const s = scaleOf(v);
  const cx = 0.5 * (v.worldLo[0] + v.worldHi[0]);
  const cy = 0.5 * (v.worldLo[1] + v.worldHi[1]);
  return [
    0.5 * v.width + (p[0] - cx) * s,
    0.5 * v.height - (p[1] - cy) * s,
  ];
}
