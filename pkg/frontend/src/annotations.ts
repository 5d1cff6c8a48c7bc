// Annotation geometry. All coordinates here are frame pixels; screen
// coordinates exist only at the canvas boundary and are converted on the
// way in, so zoom and pan can never leak into a committed payload.

import type {
  FinishLineWire,
  MotionVectorWire,
  PolygonWire,
  ZonesWire,
} from "./api.js";

export interface Point {
  x: number;
  y: number;
}

export interface Viewport {
  zoom: number;
  panX: number;
  panY: number;
}

export type CanvasAnnotation =
  | { kind: "mask"; vertices: Point[]; draft: boolean }
  | { kind: "finish_zone"; vertices: Point[]; dwell: number; draft: boolean }
  | { kind: "motion_arrow"; anchor: Point; end: Point; width: number; draft: boolean };

export class AnnotationError extends Error {}

export function screenToFrame(p: Point, view: Viewport): Point {
  return { x: (p.x - view.panX) / view.zoom, y: (p.y - view.panY) / view.zoom };
}

export function frameToScreen(p: Point, view: Viewport): Point {
  return { x: p.x * view.zoom + view.panX, y: p.y * view.zoom + view.panY };
}

// ---- mask polygons ----

export function commitMaskPolygon(clicks: Point[]): PolygonWire {
  if (clicks.length < 3) {
    throw new AnnotationError(
      `a mask polygon needs at least 3 points, have ${clicks.length}`,
    );
  }
  return { vertices: clicks.map((p): [number, number] => [p.x, p.y]) };
}

export function maskFromWire(poly: PolygonWire): Point[] {
  return poly.vertices.map(([x, y]) => ({ x, y }));
}

// ---- finish zones ----

// rectangle drag helper; corners may come in any order
export function rectVertices(a: Point, b: Point): Point[] {
  const x0 = Math.min(a.x, b.x);
  const x1 = Math.max(a.x, b.x);
  const y0 = Math.min(a.y, b.y);
  const y1 = Math.max(a.y, b.y);
  return [
    { x: x0, y: y0 },
    { x: x1, y: y0 },
    { x: x1, y: y1 },
    { x: x0, y: y1 },
  ];
}

export function commitFinishZone(vertices: Point[], dwell: number): FinishLineWire {
  if (vertices.length < 3) {
    throw new AnnotationError(
      `a finish zone needs at least 3 vertices, have ${vertices.length}`,
    );
  }
  if (!Number.isInteger(dwell) || dwell < 1) {
    throw new AnnotationError(`dwell must be a whole number >= 1, got ${dwell}`);
  }
  return {
    region: { vertices: vertices.map((p): [number, number] => [p.x, p.y]) },
    dwell,
  };
}

export function finishZoneFromWire(wire: FinishLineWire): { vertices: Point[]; dwell: number } {
  return { vertices: maskFromWire(wire.region), dwell: wire.dwell };
}

// ---- motion arrows ----
//
// Gesture: click the anchor, drag to set direction and distance, then a
// side handle sets corridor width. Angles follow pixel axes: 0 deg is +x,
// 90 deg is +y (down).

export function arrowFromGesture(anchor: Point, dragEnd: Point, width: number): MotionVectorWire {
  const dx = dragEnd.x - anchor.x;
  const dy = dragEnd.y - anchor.y;
  const distance = Math.hypot(dx, dy);
  if (distance <= 0) {
    throw new AnnotationError("drag away from the anchor to set a direction");
  }
  if (width <= 0) {
    throw new AnnotationError(`corridor width must be positive, got ${width}`);
  }
  const direction_deg = ((Math.atan2(dy, dx) * 180) / Math.PI + 360) % 360;
  return { anchor: [anchor.x, anchor.y], direction_deg, distance, width };
}

export function arrowToGeometry(wire: MotionVectorWire): { anchor: Point; end: Point; width: number } {
  const theta = (wire.direction_deg * Math.PI) / 180;
  const anchor = { x: wire.anchor[0], y: wire.anchor[1] };
  return {
    anchor,
    end: {
      x: anchor.x + wire.distance * Math.cos(theta),
      y: anchor.y + wire.distance * Math.sin(theta),
    },
    width: wire.width,
  };
}

// ---- zone payload assembly ----

export function zonesPayload(
  finish?: FinishLineWire,
  arrow?: MotionVectorWire,
): ZonesWire {
  const zones: ZonesWire = {};
  if (finish !== undefined) zones.finish_line = finish;
  if (arrow !== undefined) zones.motion_vector = arrow;
  if (zones.finish_line === undefined && zones.motion_vector === undefined) {
    throw new AnnotationError("nothing to commit: no zone drawn");
  }
  return zones;
}
