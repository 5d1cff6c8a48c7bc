"""Identity maintenance: two-stage association over Kalman-predicted tracks.

High-confidence detections associate first against Active and Lost tracks;
low-confidence detections then recover occluded Active tracks so one
identity survives a score dip. With appearance enabled the first stage fuses
an appearance cost (min of motion and appearance) and additionally gates
cells by cosine distance, which disambiguates crossings that IoU alone
cannot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .assignment import solve_assignment
from .detect import Detection, VehicleClass
from .features import appearance_embed, cosine_distance
from .geom import BBox, iou
from .kalman import (
    KalmanState,
    kalman_initiate,
    kalman_predict,
    kalman_two_point,
    kalman_update,
)

APPEARANCE_SMOOTHING = 0.9


class TrackStatus(Enum):
    TENTATIVE = "tentative"
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass(frozen=True)
class TrackerParams:
    iou_threshold: float = 0.45
    score_high: float = 0.7
    score_low: float = 0.1
    cosine_distance_max: float = 0.4
    min_hits_to_activate: int = 3
    max_time_lost: int = 30
    appearance_enabled: bool = False

    def __post_init__(self):
        if not 0.0 <= self.score_low < self.score_high <= 1.0:
            raise ValueError(
                f"need 0 <= score_low < score_high <= 1, "
                f"got {self.score_low}, {self.score_high}"
            )
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must be in [0,1], got {self.iou_threshold}")
        if self.min_hits_to_activate < 1:
            raise ValueError("min_hits_to_activate must be >= 1")
        if self.max_time_lost < 0:
            raise ValueError("max_time_lost must be >= 0")

    def to_canonical(self) -> dict:
        """Wire form; key set is shared with the cache config hash."""
        return {
            "iou_threshold": self.iou_threshold,
            "score_high": self.score_high,
            "score_low": self.score_low,
            "cosine_distance_max": self.cosine_distance_max,
            "min_hits": self.min_hits_to_activate,
            "max_time_lost": self.max_time_lost,
            "appearance": self.appearance_enabled,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_canonical(), separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "TrackerParams":
        known = {
            "iou_threshold": "iou_threshold",
            "score_high": "score_high",
            "score_low": "score_low",
            "cosine_distance_max": "cosine_distance_max",
            "min_hits": "min_hits_to_activate",
            "max_time_lost": "max_time_lost",
            "appearance": "appearance_enabled",
        }
        kwargs = {attr: obj[key] for key, attr in known.items() if key in obj}
        return cls(**kwargs)


class Track:
    """One identity: Kalman state plus lifecycle bookkeeping."""

    def __init__(self, track_id: int, det: Detection, frame: int,
                 feature: np.ndarray | None, activate: bool):
        self.id = track_id
        self.cls = det.cls
        self.state: KalmanState = kalman_initiate(det.box)
        self.status = TrackStatus.ACTIVE if activate else TrackStatus.TENTATIVE
        self.age = 0
        self.time_since_update = 0
        self.hits = 1
        self.history: list[tuple[int, BBox]] = [(frame, self.state.box())]
        self.appearance = feature
        self.score = det.score
        self._last_measurement: tuple[int, BBox] = (frame, det.box)

    @property
    def box(self) -> BBox:
        return self.state.box()

    def predict(self):
        self.state = kalman_predict(self.state)
        self.age += 1
        self.time_since_update += 1

    def mark_hit(self, det: Detection, frame: int, feature: np.ndarray | None,
                 min_hits: int):
        self.hits += 1
        self.time_since_update = 0
        if self.hits == 2:
            prev_frame, prev_box = self._last_measurement
            gap = frame - prev_frame
            if gap == 1:
                self.state = kalman_two_point(prev_box, det.box)
            elif gap > 1:
                # spread the observed displacement over the gap so the
                # per-frame velocity estimate stays correct
                step = np.array([
                    (det.box.x + det.box.w / 2) - (prev_box.x + prev_box.w / 2),
                    (det.box.y + det.box.h / 2) - (prev_box.y + prev_box.h / 2),
                    det.box.w - prev_box.w,
                    det.box.h - prev_box.h,
                ]) / gap
                cx = prev_box.x + prev_box.w / 2 + step[0] * (gap - 1)
                cy = prev_box.y + prev_box.h / 2 + step[1] * (gap - 1)
                w = max(prev_box.w + step[2] * (gap - 1), 1e-3)
                h = max(prev_box.h + step[3] * (gap - 1), 1e-3)
                synth = BBox(cx - w / 2, cy - h / 2, w, h)
                self.state = kalman_two_point(synth, det.box)
        self.state = kalman_update(self.state, det.box)
        self.score = det.score
        self._last_measurement = (frame, det.box)
        if feature is not None:
            if self.appearance is None:
                self.appearance = feature
            else:
                blended = APPEARANCE_SMOOTHING * self.appearance + (1 - APPEARANCE_SMOOTHING) * feature
                self.appearance = blended / np.linalg.norm(blended)
        if self.status in (TrackStatus.TENTATIVE, TrackStatus.LOST):
            if self.hits >= min_hits or self.status is TrackStatus.LOST:
                self.status = TrackStatus.ACTIVE
        self.history.append((frame, self.state.box()))


@dataclass(frozen=True)
class TrackSnapshot:
    """One Active track's per-frame output."""

    track_id: int
    cls: VehicleClass
    box: BBox
    score: float


class Tracker:
    """Sequential tracker; one instance per session, frames in order."""

    def __init__(self, params: TrackerParams | None = None):
        self.params = params or TrackerParams()
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_frame: int | None = None

    def _associate(self, tracks: list[Track], dets: list[Detection],
                   features: list[np.ndarray] | None) -> list[tuple[int, int]]:
        if not tracks or not dets:
            return []
        p = self.params
        n, m = len(tracks), len(dets)
        overlap = [[iou(tracks[r].box, dets[c].box) for c in range(m)] for r in range(n)]
        app_dist = None
        if features is not None:
            app_dist = [
                [
                    cosine_distance(tracks[r].appearance, features[c])
                    if tracks[r].appearance is not None else None
                    for c in range(m)
                ]
                for r in range(n)
            ]

        def gate(r, c):
            if tracks[r].cls is not dets[c].cls:
                return False
            if overlap[r][c] < p.iou_threshold:
                return False
            if app_dist is not None and app_dist[r][c] is not None:
                if app_dist[r][c] > p.cosine_distance_max:
                    return False
            return True

        cost = [[1.0 - overlap[r][c] for c in range(m)] for r in range(n)]
        if app_dist is not None:
            for r in range(n):
                for c in range(m):
                    if app_dist[r][c] is not None:
                        cost[r][c] = min(cost[r][c], app_dist[r][c])
        return solve_assignment(cost, gate)

    def step(self, frame: int, dets_high: Sequence[Detection],
             dets_low: Sequence[Detection],
             frame_raster: np.ndarray | None = None) -> list[TrackSnapshot]:
        """Advance one frame; returns every Active track's snapshot."""
        p = self.params
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(f"frame index regressed: {frame} after {self._last_frame}")
        if p.appearance_enabled and frame_raster is None:
            raise ValueError("appearance matching enabled but no frame raster supplied")
        self._last_frame = frame

        # canonical processing order; the full key makes the step invariant
        # to the caller's detection ordering even under score ties
        def det_key(d: Detection) -> tuple:
            return (-d.score, d.box.x, d.box.y, d.box.w, d.box.h, int(d.cls))

        high = sorted(dets_high, key=det_key)
        low = sorted(dets_low, key=det_key)

        live = [t for t in self.tracks if t.status is not TrackStatus.REMOVED]
        for t in live:
            t.predict()

        features = None
        if p.appearance_enabled:
            features = [appearance_embed(frame_raster, d.box) for d in high]

        # stage 1: Active + Lost vs high band
        pool1 = [t for t in live if t.status in (TrackStatus.ACTIVE, TrackStatus.LOST)]
        matches1 = self._associate(pool1, high, features)
        matched_tracks = set()
        matched_high = set()
        for r, c in matches1:
            pool1[r].mark_hit(high[c], frame, features[c] if features else None, p.min_hits_to_activate)
            matched_tracks.add(id(pool1[r]))
            matched_high.add(c)

        # stage 2: leftover Active vs low band, motion only
        pool2 = [t for t in pool1 if id(t) not in matched_tracks and t.status is TrackStatus.ACTIVE]
        matches2 = self._associate(pool2, low, None)
        for r, c in matches2:
            pool2[r].mark_hit(low[c], frame, None, p.min_hits_to_activate)
            matched_tracks.add(id(pool2[r]))

        # stage 3: tentative tracks vs leftover high band
        pool3 = [t for t in live if t.status is TrackStatus.TENTATIVE]
        rest_high = [c for c in range(len(high)) if c not in matched_high]
        matches3 = self._associate(pool3, [high[c] for c in rest_high],
                                   [features[c] for c in rest_high] if features else None)
        for r, ci in matches3:
            c = rest_high[ci]
            pool3[r].mark_hit(high[c], frame, features[c] if features else None, p.min_hits_to_activate)
            matched_tracks.add(id(pool3[r]))
            matched_high.add(c)

        for t in live:
            if id(t) in matched_tracks:
                continue
            if t.status is TrackStatus.TENTATIVE:
                # a missed frame breaks the consecutive-hit requirement
                t.status = TrackStatus.REMOVED
            elif t.status is TrackStatus.ACTIVE:
                t.status = TrackStatus.LOST
            elif t.status is TrackStatus.LOST and t.time_since_update > p.max_time_lost:
                t.status = TrackStatus.REMOVED

        for c, det in enumerate(high):
            if c in matched_high:
                continue
            feature = features[c] if features else None
            track = Track(self._next_id, det, frame, feature,
                          activate=p.min_hits_to_activate <= 1)
            self._next_id += 1
            self.tracks.append(track)

        active = sorted(
            (t for t in self.tracks if t.status is TrackStatus.ACTIVE),
            key=lambda t: t.id,
        )
        return [
            TrackSnapshot(track_id=t.id, cls=t.cls, box=t.box, score=t.score)
            for t in active
        ]
