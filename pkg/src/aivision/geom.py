"""Pixel-space geometry primitives: boxes, polygons, rasterized masks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Point = tuple[float, float]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box as top-left corner plus size, sub-pixel floats."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for v in (self.x, self.y, self.w, self.h):
            if not math.isfinite(v):
                raise ValueError(f"box coordinates must be finite, got {self}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box size must be positive, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint, 1 when identical."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def center(b: BBox) -> Point:
    return (b.x + b.w / 2.0, b.y + b.h / 2.0)


def _segments_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool:
    """True if closed segments p1-p2 and p3-p4 share any point."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if v > 0:
            return 1
        if v < 0:
            return -1
        return 0

    def on_segment(a, b, c):
        # c collinear with a-b: is it within the segment's bounding box?
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    o1 = orient(p1, p2, p3)
    o2 = orient(p1, p2, p4)
    o3 = orient(p3, p4, p1)
    o4 = orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_segment(p1, p2, p3):
        return True
    if o2 == 0 and on_segment(p1, p2, p4):
        return True
    if o3 == 0 and on_segment(p3, p4, p1):
        return True
    if o4 == 0 and on_segment(p3, p4, p2):
        return True
    return False


class Polygon:
    """Implicitly closed polygon; rejects self-intersection at construction."""

    __slots__ = ("vertices",)

    def __init__(self, vertices: Iterable[Point]):
        verts = [(float(x), float(y)) for x, y in vertices]
        if len(verts) < 3:
            raise ValueError(f"polygon needs at least 3 vertices, got {len(verts)}")
        for x, y in verts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("polygon vertices must be finite")
        n = len(verts)
        for i in range(n):
            if verts[i] == verts[(i + 1) % n]:
                raise ValueError("polygon has a zero-length edge")
        self._check_simple(verts)
        self.vertices: tuple[Point, ...] = tuple(verts)

    @staticmethod
    def _check_simple(verts: list[Point]):
        n = len(verts)
        edges = [(verts[i], verts[(i + 1) % n]) for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                # adjacent edges legitimately share one endpoint
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(*edges[i], *edges[j]):
                    raise ValueError("polygon is self-intersecting")

    def __eq__(self, other):
        return isinstance(other, Polygon) and self.vertices == other.vertices

    def __hash__(self):
        return hash(self.vertices)

    def __repr__(self):
        return f"Polygon({list(self.vertices)!r})"

    def to_json(self) -> dict:
        return {"vertices": [[x, y] for x, y in self.vertices]}

    @classmethod
    def from_json(cls, obj: dict) -> "Polygon":
        return cls(tuple(v) for v in obj["vertices"])


def point_in_polygon(p: Point, poly: Polygon) -> bool:
    """Even-odd membership test; points on the boundary count as inside."""
    x, y = p
    verts = poly.vertices
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if cross == 0 and min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2):
            return True
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = verts[i]
        xj, yj = verts[j]
        if (yi > y) != (yj > y) and x < (xj - xi) * (y - yi) / (yj - yi) + xi:
            inside = not inside
        j = i
    return inside


class MaskRaster:
    """Per-pixel exclusion bitmap; True marks an excluded pixel."""

    __slots__ = ("width", "height", "excluded")

    def __init__(self, width: int, height: int, excluded: np.ndarray | None = None):
        if width <= 0 or height <= 0:
            raise ValueError("mask dimensions must be positive")
        self.width = int(width)
        self.height = int(height)
        if excluded is None:
            excluded = np.zeros((self.height, self.width), dtype=bool)
        excluded = np.asarray(excluded, dtype=bool)
        if excluded.shape != (self.height, self.width):
            raise ValueError(
                f"mask bitmap shape {excluded.shape} does not match "
                f"{self.height}x{self.width}"
            )
        self.excluded = excluded

    def excluded_count(self) -> int:
        return int(self.excluded.sum())

    def is_excluded(self, x: float, y: float) -> bool:
        """True if the pixel containing point (x, y) is excluded."""
        px = min(max(int(math.floor(x)), 0), self.width - 1)
        py = min(max(int(math.floor(y)), 0), self.height - 1)
        return bool(self.excluded[py, px])


def rasterize_mask(polys: Sequence[Polygon], width: int, height: int) -> MaskRaster:
    """Mark every pixel whose center lies in any polygon.

    Polygons reaching outside the frame are clipped by construction: only
    in-frame pixel centers are tested.
    """
    mask = MaskRaster(width, height)
    if not polys:
        return mask
    xs = np.arange(width, dtype=float) + 0.5
    ys = np.arange(height, dtype=float) + 0.5
    X, Y = np.meshgrid(xs, ys)
    excluded = np.zeros((height, width), dtype=bool)
    for poly in polys:
        verts = poly.vertices
        n = len(verts)
        inside = np.zeros((height, width), dtype=bool)
        boundary = np.zeros((height, width), dtype=bool)
        j = n - 1
        for i in range(n):
            xi, yi = verts[i]
            xj, yj = verts[j]
            if yi != yj:
                with np.errstate(invalid="ignore"):
                    crossing = ((yi > Y) != (yj > Y)) & (
                        X < (xj - xi) * (Y - yi) / (yj - yi) + xi
                    )
                inside ^= crossing
            cross = (xj - xi) * (Y - yi) - (yj - yi) * (X - xi)
            on_edge = (
                (cross == 0)
                & (X >= min(xi, xj))
                & (X <= max(xi, xj))
                & (Y >= min(yi, yj))
                & (Y <= max(yi, yj))
            )
            boundary |= on_edge
            j = i
        excluded |= inside | boundary
    return MaskRaster(width, height, excluded)
