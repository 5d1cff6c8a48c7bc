"""Vehicle template gallery: best crop per track, grouped by class.

Storage is a directory of PNG crops plus one JSON index, rewritten
atomically on every mutation; no database, so a session directory can be
copied or inspected with ordinary tools. Verification queries run against
an immutable snapshot of the index and honor a wall-clock budget.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable

import numpy as np
from PIL import Image

from .detect import VehicleClass
from .features import appearance_embed, crop_pixels
from .tracker import TrackSnapshot

MIN_CROP_SIDE = 32
DEFAULT_MIN_SCORE = 0.7
DEFAULT_SIMILARITY_MIN = 0.6


@dataclass(frozen=True)
class TemplateRecord:
    template_id: str
    track_id: int
    cls: VehicleClass
    crop_path: str | None
    feature: tuple[float, ...]
    frame: int
    score: float
    created_at: float

    def __post_init__(self):
        norm = float(np.linalg.norm(self.feature))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"template feature must be unit-norm, got |f| = {norm}")


@dataclass(frozen=True)
class Rejection:
    reason: str


@dataclass(frozen=True)
class RetentionPolicy:
    max_age: float | None = None  # seconds; None = keep forever
    max_records: int | None = None
    anonymize: bool = False

    def __post_init__(self):
        if self.max_records is not None and self.max_records < 0:
            raise ValueError("max_records must be >= 0")
        if self.max_age is not None and self.max_age < 0:
            raise ValueError("max_age must be >= 0")


@dataclass(frozen=True)
class PurgeReport:
    removed: tuple[str, ...]
    anonymized: tuple[str, ...]


class VerifyOutcome(Enum):
    MATCH = "match"
    NO_MATCH = "no_match"
    TIMED_OUT = "timed_out"


@dataclass(frozen=True)
class VerifyResult:
    outcome: VerifyOutcome
    template_id: str | None = None
    similarity_pct: float | None = None


class Gallery:
    """One gallery per session directory."""

    def __init__(self, root: str):
        self.root = root
        self._by_track: dict[int, TemplateRecord] = {}
        self._load()

    @property
    def index_path(self) -> str:
        return os.path.join(self.root, "index.json")

    def _load(self):
        if not os.path.exists(self.index_path):
            return
        with open(self.index_path) as f:
            entries = json.load(f)
        for e in entries:
            rec = TemplateRecord(
                template_id=e["template_id"], track_id=e["track_id"],
                cls=VehicleClass(e["cls"]), crop_path=e.get("crop_path"),
                feature=tuple(e["feature"]), frame=e["frame"],
                score=e["score"], created_at=e["created_at"],
            )
            self._by_track[rec.track_id] = rec

    def _save(self):
        entries = [
            {
                "template_id": r.template_id, "track_id": r.track_id,
                "cls": int(r.cls), "crop_path": r.crop_path,
                "feature": list(r.feature), "frame": r.frame,
                "score": r.score, "created_at": r.created_at,
            }
            for r in sorted(self._by_track.values(), key=lambda r: r.template_id)
        ]
        os.makedirs(self.root, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".index-", dir=self.root)
        try:
            with os.fdopen(fd, "w") as f:
                json.dump(entries, f)
            os.replace(tmp, self.index_path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def records(self) -> tuple[TemplateRecord, ...]:
        return tuple(sorted(self._by_track.values(), key=lambda r: r.template_id))

    def __len__(self) -> int:
        return len(self._by_track)

    def register_template(self, track: TrackSnapshot, frame_raster: np.ndarray,
                          frame: int, min_score: float = DEFAULT_MIN_SCORE,
                          now: float | None = None) -> TemplateRecord | Rejection:
        """Quality-gate a crop and store it; best score per track wins."""
        if frame_raster is None:
            raise ValueError("frame raster required to register a template")
        crop = crop_pixels(frame_raster, track.box)
        h, w = crop.shape[:2]
        if w < MIN_CROP_SIDE or h < MIN_CROP_SIDE:
            return Rejection(f"crop {w}x{h} below minimum {MIN_CROP_SIDE}x{MIN_CROP_SIDE}")
        if track.score < min_score:
            return Rejection(f"detection score {track.score:.2f} below {min_score:.2f}")

        existing = self._by_track.get(track.track_id)
        if existing is not None and track.score <= existing.score:
            return existing

        template_id = existing.template_id if existing else f"tpl-{track.track_id:06d}"
        class_dir = os.path.join(self.root, track.cls.label)
        os.makedirs(class_dir, exist_ok=True)
        crop_path = os.path.join(class_dir, f"{template_id}.png")
        Image.fromarray(crop).save(crop_path)
        if existing is not None and existing.crop_path and existing.crop_path != crop_path:
            try:
                os.unlink(existing.crop_path)
            except OSError:
                pass

        feature = appearance_embed(frame_raster, track.box)
        rec = TemplateRecord(
            template_id=template_id, track_id=track.track_id, cls=track.cls,
            crop_path=crop_path, feature=tuple(float(v) for v in feature),
            frame=frame, score=track.score,
            created_at=time.time() if now is None else now,
        )
        self._by_track[track.track_id] = rec
        self._save()
        return rec

    def verify(self, query: np.ndarray,
               similarity_min: float = DEFAULT_SIMILARITY_MIN,
               timeout: float | None = None,
               clock: Callable[[], float] = time.monotonic) -> VerifyResult:
        """Best cosine similarity over the gallery; >= threshold matches."""
        qn = float(np.linalg.norm(query))
        if abs(qn - 1.0) > 1e-6:
            raise ValueError("query feature must be unit-norm")
        deadline = None if timeout is None else clock() + timeout
        best_id = None
        best_sim = -2.0
        for rec in self.records():
            if deadline is not None and clock() > deadline:
                return VerifyResult(outcome=VerifyOutcome.TIMED_OUT)
            sim = float(np.dot(np.asarray(rec.feature), query))
            if sim > best_sim:
                best_sim = sim
                best_id = rec.template_id
        if best_id is not None and best_sim >= similarity_min:
            return VerifyResult(outcome=VerifyOutcome.MATCH, template_id=best_id,
                                similarity_pct=100.0 * best_sim)
        return VerifyResult(outcome=VerifyOutcome.NO_MATCH)

    def apply_retention(self, policy: RetentionPolicy,
                        now: float | None = None) -> PurgeReport:
        """Age out, cap (oldest first), then optionally strip crops."""
        now = time.time() if now is None else now
        removed: list[TemplateRecord] = []
        keep = dict(self._by_track)

        if policy.max_age is not None:
            for tid, rec in list(keep.items()):
                if rec.created_at < now - policy.max_age:
                    removed.append(keep.pop(tid))

        if policy.max_records is not None and len(keep) > policy.max_records:
            by_age = sorted(keep.values(), key=lambda r: (r.created_at, r.template_id))
            overflow = len(keep) - policy.max_records
            for rec in by_age[:overflow]:
                removed.append(keep.pop(rec.track_id))

        anonymized: list[str] = []
        if policy.anonymize:
            for tid, rec in keep.items():
                if rec.crop_path is not None:
                    self._delete_crop(rec)
                    keep[tid] = replace(rec, crop_path=None)
                    anonymized.append(rec.template_id)

        for rec in removed:
            self._delete_crop(rec)
        self._by_track = keep
        self._save()
        return PurgeReport(
            removed=tuple(sorted(r.template_id for r in removed)),
            anonymized=tuple(sorted(anonymized)),
        )

    @staticmethod
    def _delete_crop(rec: TemplateRecord):
        if rec.crop_path:
            try:
                os.unlink(rec.crop_path)
            except OSError:
                pass

    def snapshot(self) -> list[dict]:
        """Index view for the HTTP API."""
        return [
            {
                "template_id": r.template_id, "track_id": r.track_id,
                "class": r.cls.label, "frame": r.frame, "score": r.score,
                "created_at": r.created_at,
                "has_crop": r.crop_path is not None,
            }
            for r in self.records()
        ]
