"""Per-class vehicle counting over track streams.

Two methods, selectable per run: Finish Line (a polygonal zone the box
center must occupy for a run of consecutive frames) and Motion Vector (a
directed corridor the center must traverse end to end). Either way a track
id is counted at most once per method, and the ledger's totals are always
a pure fold over its event list, which is what makes cached replay counting
bit-identical to the live run.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .cache import CacheRecord, read_cache, require_config
from .detect import DetectorConfig, VehicleClass
from .geom import Polygon, center, point_in_polygon
from .tracker import TrackerParams, TrackSnapshot


class CountMethod(Enum):
    FINISH_LINE = "finish_line"
    MOTION_VECTOR = "motion_vector"


@dataclass(frozen=True)
class FinishLineZone:
    region: Polygon
    dwell_frames: int = 5

    def __post_init__(self):
        if self.dwell_frames < 1:
            raise ValueError(f"dwell_frames must be >= 1, got {self.dwell_frames}")

    def to_json(self) -> dict:
        return {"finish_line": {"region": self.region.to_json(), "dwell": self.dwell_frames}}


@dataclass(frozen=True)
class MotionVectorSpec:
    anchor: tuple[float, float]
    direction_deg: float
    distance: float
    width: float

    def __post_init__(self):
        if not 0.0 <= self.direction_deg < 360.0:
            raise ValueError(f"direction must be in [0, 360), got {self.direction_deg}")
        if not self.distance > 0:
            raise ValueError(f"distance must be positive, got {self.distance}")
        if not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")

    def axes(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Unit direction vector and its left normal, in pixel axes."""
        theta = math.radians(self.direction_deg)
        u = (math.cos(theta), math.sin(theta))
        return u, (-u[1], u[0])

    def to_json(self) -> dict:
        return {"motion_vector": {
            "anchor": [self.anchor[0], self.anchor[1]],
            "direction_deg": self.direction_deg,
            "distance": self.distance,
            "width": self.width,
        }}


MethodConfig = FinishLineZone | MotionVectorSpec


def method_config_from_json(obj: dict) -> MethodConfig:
    if "finish_line" in obj:
        body = obj["finish_line"]
        return FinishLineZone(region=Polygon.from_json(body["region"]),
                              dwell_frames=int(body.get("dwell", 5)))
    if "motion_vector" in obj:
        body = obj["motion_vector"]
        return MotionVectorSpec(anchor=(float(body["anchor"][0]), float(body["anchor"][1])),
                                direction_deg=float(body["direction_deg"]),
                                distance=float(body["distance"]),
                                width=float(body["width"]))
    raise ValueError("config must contain a 'finish_line' or 'motion_vector' object")


@dataclass(frozen=True)
class CountEvent:
    track_id: int
    cls: VehicleClass
    frame: int
    method: CountMethod


class CountLedger:
    """Append-only event list with per-class totals kept in lockstep."""

    def __init__(self):
        self._events: list[CountEvent] = []
        self._counted: set[tuple[int, CountMethod]] = set()
        self._totals: dict[VehicleClass, int] = {}

    def counted(self, track_id: int, method: CountMethod) -> bool:
        return (track_id, method) in self._counted

    def record(self, event: CountEvent) -> None:
        key = (event.track_id, event.method)
        if key in self._counted:
            raise ValueError(f"track {event.track_id} already counted by {event.method.value}")
        self._events.append(event)
        self._counted.add(key)
        self._totals[event.cls] = self._totals.get(event.cls, 0) + 1

    @property
    def events(self) -> tuple[CountEvent, ...]:
        return tuple(self._events)

    @property
    def totals(self) -> dict[VehicleClass, int]:
        return dict(self._totals)

    def total(self) -> int:
        return len(self._events)

    def snapshot(self) -> dict:
        """Consistent copy for display; safe to hand across threads."""
        return {
            "totals": {cls.label: n for cls, n in sorted(self._totals.items())},
            "total": len(self._events),
            "events": [
                {"track_id": e.track_id, "class": e.cls.label,
                 "frame": e.frame, "method": e.method.value}
                for e in self._events
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), separators=(",", ":"))

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["track_id", "class", "frame", "method"])
        for e in self._events:
            writer.writerow([e.track_id, e.cls.label, e.frame, e.method.value])
        return out.getvalue()


class FinishLineCounter:
    """Counts a track once its center stays in the zone dwell_frames in a row.

    A frame where the track is absent from the Active set breaks the run,
    same as stepping outside: the dwell timer measures consecutive observed
    presence.
    """

    method = CountMethod.FINISH_LINE

    def __init__(self, zone: FinishLineZone):
        self.zone = zone
        self._streak: dict[int, int] = {}
        self._last_frame: int | None = None

    def update(self, frame: int, tracks: Sequence[TrackSnapshot],
               ledger: CountLedger) -> None:
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(f"frame index regressed: {frame} after {self._last_frame}")
        self._last_frame = frame
        present = set()
        for t in tracks:
            present.add(t.track_id)
            if point_in_polygon(center(t.box), self.zone.region):
                streak = self._streak.get(t.track_id, 0) + 1
                self._streak[t.track_id] = streak
                if streak >= self.zone.dwell_frames and not ledger.counted(t.track_id, self.method):
                    ledger.record(CountEvent(t.track_id, t.cls, frame, self.method))
            else:
                self._streak.pop(t.track_id, None)
        for tid in [tid for tid in self._streak if tid not in present]:
            del self._streak[tid]


@dataclass
class _CorridorState:
    entry_s: float


class MotionVectorCounter:
    """Counts a track whose center covers the corridor's full length.

    The corridor is a rectangle of the given length and width anchored at
    one end and oriented along the direction. A track is armed when its
    center is first observed inside; it counts on the frame its projected
    displacement since entry reaches the corridor length. Leaving sideways
    or out the near end disarms it (re-entry starts over).
    """

    method = CountMethod.MOTION_VECTOR

    def __init__(self, spec: MotionVectorSpec):
        self.spec = spec
        self._armed: dict[int, _CorridorState] = {}
        self._last_frame: int | None = None

    def _project(self, point: tuple[float, float]) -> tuple[float, float]:
        u, n = self.spec.axes()
        dx = point[0] - self.spec.anchor[0]
        dy = point[1] - self.spec.anchor[1]
        return dx * u[0] + dy * u[1], dx * n[0] + dy * n[1]

    def update(self, frame: int, tracks: Sequence[TrackSnapshot],
               ledger: CountLedger) -> None:
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(f"frame index regressed: {frame} after {self._last_frame}")
        self._last_frame = frame
        spec = self.spec
        for t in tracks:
            if ledger.counted(t.track_id, self.method):
                continue
            s, lateral = self._project(center(t.box))
            inside = 0.0 <= s <= spec.distance and abs(lateral) <= spec.width / 2
            state = self._armed.get(t.track_id)
            if state is None:
                if inside:
                    self._armed[t.track_id] = _CorridorState(entry_s=s)
                continue
            if s - state.entry_s >= spec.distance:
                ledger.record(CountEvent(t.track_id, t.cls, frame, self.method))
                del self._armed[t.track_id]
            elif not inside:
                # left sideways or backed out before covering the length
                del self._armed[t.track_id]


Counter = FinishLineCounter | MotionVectorCounter


def make_counter(config: MethodConfig) -> Counter:
    if isinstance(config, FinishLineZone):
        return FinishLineCounter(config)
    if isinstance(config, MotionVectorSpec):
        return MotionVectorCounter(config)
    raise TypeError(f"unknown counting config: {type(config).__name__}")


def count_records(records: Iterable[CacheRecord], config: MethodConfig) -> CountLedger:
    """Fold a record stream through a fresh counter."""
    counter = make_counter(config)
    ledger = CountLedger()
    for rec in records:
        counter.update(rec.frame, rec.tracks, ledger)
    return ledger


def quick_count(cache_path: str, config: MethodConfig,
                params: TrackerParams | None = None,
                detector: DetectorConfig | None = None) -> CountLedger:
    """Count from a cache without rerunning detection or tracking.

    When tracker params and detector config are supplied, the cache's
    config hash must match; a stale cache raises CacheConfigMismatch
    telling the caller to re-run the pipeline.
    """
    header, records = read_cache(cache_path)
    if params is not None and detector is not None:
        require_config(header, params, detector)
    return count_records(records, config)
