/** Imperative half of rendering: walk a scene onto a 2D context. */

import type { Scene } from "./render.js";

export function paint(ctx: CanvasRenderingContext2D, scene: Scene, width: number, height: number): void {
  ctx.clearRect(0, 0, width, height);
  for (const shape of scene) {
    ctx.strokeStyle = shape.kind === "text" ? shape.fill : shape.stroke;
    ctx.lineWidth = 1.5;
    switch (shape.kind) {
      case "rect":
        if (shape.fill) {
          ctx.fillStyle = shape.fill;
          ctx.fillRect(shape.x, shape.y, shape.w, shape.h);
        }
        ctx.strokeRect(shape.x, shape.y, shape.w, shape.h);
        break;
      case "polyline":
      case "polygon": {
        if (shape.points.length === 0) break;
        ctx.beginPath();
        ctx.moveTo(shape.points[0]![0], shape.points[0]![1]);
        for (const p of shape.points.slice(1)) ctx.lineTo(p[0], p[1]);
        if (shape.kind === "polygon") {
          ctx.closePath();
          if (shape.fill) {
            ctx.fillStyle = shape.fill;
            ctx.fill();
          }
        }
        ctx.stroke();
        break;
      }
      case "circle":
        ctx.beginPath();
        ctx.arc(shape.x, shape.y, shape.r, 0, 2 * Math.PI);
        if (shape.fill) {
          ctx.fillStyle = shape.fill;
          ctx.fill();
        }
        ctx.stroke();
        break;
      case "arrow": {
        const [x0, y0] = shape.from;
        const [x1, y1] = shape.to;
        ctx.beginPath();
        ctx.moveTo(x0, y0);
        ctx.lineTo(x1, y1);
        ctx.stroke();
        const len = Math.hypot(x1 - x0, y1 - y0);
        if (len > 1) {
          const ang = Math.atan2(y1 - y0, x1 - x0);
          ctx.beginPath();
          ctx.moveTo(x1, y1);
          ctx.lineTo(x1 - 7 * Math.cos(ang - 0.4), y1 - 7 * Math.sin(ang - 0.4));
          ctx.moveTo(x1, y1);
          ctx.lineTo(x1 - 7 * Math.cos(ang + 0.4), y1 - 7 * Math.sin(ang + 0.4));
          ctx.stroke();
        }
        break;
      }
      case "text":
        ctx.fillStyle = shape.fill;
        ctx.font = "14px sans-serif";
        ctx.textAlign = "center";
        ctx.fillText(shape.text, shape.x, shape.y);
        break;
    }
  }
}
