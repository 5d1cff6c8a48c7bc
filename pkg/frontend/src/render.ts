// Canvas overlay drawing. Pure functions over a 2d context; every input
// is frame-space and mapped through the viewport here, at the last moment.

import type { CanvasAnnotation, Point, Viewport } from "./annotations.js";
import { frameToScreen } from "./annotations.js";

const MASK_FILL = "rgba(200, 60, 60, 0.25)";
const MASK_EDGE = "rgb(200, 60, 60)";
const ZONE_FILL = "rgba(60, 160, 220, 0.18)";
const ZONE_EDGE = "rgb(60, 160, 220)";
const ARROW_EDGE = "rgb(240, 180, 40)";
const DRAFT_DASH = [6, 4];

function tracePolygon(ctx: CanvasRenderingContext2D, vertices: Point[], view: Viewport): void {
  vertices.forEach((v, i) => {
    const s = frameToScreen(v, view);
    if (i === 0) ctx.moveTo(s.x, s.y);
    else ctx.lineTo(s.x, s.y);
  });
}

export function drawAnnotation(
  ctx: CanvasRenderingContext2D,
  ann: CanvasAnnotation,
  view: Viewport,
): void {
  ctx.save();
  ctx.lineWidth = 2;
  ctx.setLineDash(ann.draft ? DRAFT_DASH : []);
  switch (ann.kind) {
    case "mask": {
      ctx.strokeStyle = MASK_EDGE;
      ctx.fillStyle = MASK_FILL;
      ctx.beginPath();
      tracePolygon(ctx, ann.vertices, view);
      if (!ann.draft) {
        ctx.closePath();
        ctx.fill();
      }
      ctx.stroke();
      break;
    }
    case "finish_zone": {
      ctx.strokeStyle = ZONE_EDGE;
      ctx.fillStyle = ZONE_FILL;
      ctx.beginPath();
      tracePolygon(ctx, ann.vertices, view);
      ctx.closePath();
      ctx.fill();
      ctx.stroke();
      if (ann.vertices.length > 0) {
        const at = frameToScreen(ann.vertices[0], view);
        ctx.setLineDash([]);
        ctx.fillStyle = ZONE_EDGE;
        ctx.font = "12px sans-serif";
        ctx.fillText(`dwell ${ann.dwell}`, at.x + 4, at.y - 4);
      }
      break;
    }
    case "motion_arrow": {
      const a = frameToScreen(ann.anchor, view);
      const e = frameToScreen(ann.end, view);
      const dx = e.x - a.x;
      const dy = e.y - a.y;
      const len = Math.hypot(dx, dy);
      if (len === 0) break;
      const ux = dx / len;
      const uy = dy / len;
      // corridor outline at half-width each side
      const half = (ann.width / 2) * view.zoom;
      const nx = -uy * half;
      const ny = ux * half;
      ctx.strokeStyle = ARROW_EDGE;
      ctx.beginPath();
      ctx.moveTo(a.x + nx, a.y + ny);
      ctx.lineTo(e.x + nx, e.y + ny);
      ctx.moveTo(a.x - nx, a.y - ny);
      ctx.lineTo(e.x - nx, e.y - ny);
      ctx.stroke();
      // shaft and head
      ctx.setLineDash([]);
      ctx.beginPath();
      ctx.moveTo(a.x, a.y);
      ctx.lineTo(e.x, e.y);
      const head = 8;
      ctx.lineTo(e.x - head * (ux + uy * 0.5), e.y - head * (uy - ux * 0.5));
      ctx.moveTo(e.x, e.y);
      ctx.lineTo(e.x - head * (ux - uy * 0.5), e.y - head * (uy + ux * 0.5));
      ctx.stroke();
      break;
    }
  }
  ctx.restore();
}

export function drawAll(
  ctx: CanvasRenderingContext2D,
  annotations: CanvasAnnotation[],
  view: Viewport,
): void {
  for (const ann of annotations) drawAnnotation(ctx, ann, view);
}
