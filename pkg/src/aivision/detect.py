"""Detections, detection-stream parsing, filtering, and frame sources.

The on-disk detection stream (``.dets.jsonl``) is line-delimited JSON: a
header line carrying frame dimensions and nominal fps, then one object per
detection. Ground-truth streams (``.gt.jsonl``) reuse the same layout with an
added ``gt_id`` field, so one parser serves both.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .geom import BBox, MaskRaster, center

SCHEMA_VERSION = 1


class VehicleClass(IntEnum):
    """Vehicle categories with stable wire ids."""

    CAR = 0
    BUS = 1
    TRUCK = 2
    MOTORCYCLE = 3
    BICYCLE = 4
    OTHER = 255

    @property
    def label(self) -> str:
        return self.name.capitalize()


class DetectionStreamError(ValueError):
    """Malformed detection/GT stream; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Detection:
    frame: int
    cls: VehicleClass
    score: float
    box: BBox

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"frame index must be >= 0, got {self.frame}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0,1], got {self.score}")


@dataclass(frozen=True)
class GTRecord:
    """One ground-truth object instance in one frame."""

    frame: int
    gt_id: int
    cls: VehicleClass
    box: BBox


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    fps: float
    schema: int = SCHEMA_VERSION

    def to_json_line(self) -> str:
        return json.dumps(
            {"schema": self.schema, "width": self.width, "height": self.height, "fps": self.fps},
            separators=(",", ":"),
        )


@dataclass
class DetectionStream:
    header: StreamHeader
    detections: list[Detection]

    @property
    def frame_count(self) -> int:
        """Dense frame range implied by the stream: last detection frame + 1."""
        if not self.detections:
            return 0
        return self.detections[-1].frame + 1

    def by_frame(self) -> dict[int, list[Detection]]:
        out: dict[int, list[Detection]] = {}
        for d in self.detections:
            out.setdefault(d.frame, []).append(d)
        return out


@dataclass(frozen=True)
class DetectorConfig:
    score_threshold: float = 0.7
    class_allowlist: frozenset[VehicleClass] = frozenset(
        {VehicleClass.CAR, VehicleClass.BUS, VehicleClass.TRUCK,
         VehicleClass.MOTORCYCLE, VehicleClass.BICYCLE}
    )

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(f"score threshold must be in [0,1], got {self.score_threshold}")

    def to_canonical(self) -> dict:
        return {
            "score_threshold": self.score_threshold,
            "class_allowlist": sorted(int(c) for c in self.class_allowlist),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DetectorConfig":
        kwargs = {}
        if "score_threshold" in obj:
            kwargs["score_threshold"] = float(obj["score_threshold"])
        if "class_allowlist" in obj:
            kwargs["class_allowlist"] = frozenset(VehicleClass(int(c)) for c in obj["class_allowlist"])
        return cls(**kwargs)


def _parse_header(line: str, line_no: int) -> StreamHeader:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise DetectionStreamError(line_no, f"invalid JSON header: {e}") from e
    if not isinstance(obj, dict) or "schema" not in obj:
        raise DetectionStreamError(line_no, "missing stream header line")
    if obj["schema"] != SCHEMA_VERSION:
        raise DetectionStreamError(line_no, f"unsupported schema version {obj['schema']}")
    try:
        return StreamHeader(width=int(obj["width"]), height=int(obj["height"]), fps=float(obj["fps"]))
    except (KeyError, TypeError, ValueError) as e:
        raise DetectionStreamError(line_no, f"bad header fields: {e}") from e


def _clip_box(raw: Sequence[float], width: int, height: int, line_no: int) -> BBox | None:
    """Clip a raw [x, y, w, h] box to frame bounds; None if nothing remains."""
    if len(raw) != 4:
        raise DetectionStreamError(line_no, f"box must have 4 values, got {len(raw)}")
    x, y, w, h = (float(v) for v in raw)
    if w <= 0 or h <= 0:
        raise DetectionStreamError(line_no, f"box size must be positive, got w={w} h={h}")
    x1, y1 = max(x, 0.0), max(y, 0.0)
    x2, y2 = min(x + w, float(width)), min(y + h, float(height))
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return None
    return BBox(x1, y1, x2 - x1, y2 - y1)


def _parse_record(line: str, line_no: int, header: StreamHeader, want_gt: bool):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise DetectionStreamError(line_no, f"invalid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise DetectionStreamError(line_no, "record must be a JSON object")
    try:
        frame = int(obj["frame"])
        cls_id = int(obj["cls"])
        raw_box = obj["box"]
    except (KeyError, TypeError, ValueError) as e:
        raise DetectionStreamError(line_no, f"bad record fields: {e}") from e
    if frame < 0:
        raise DetectionStreamError(line_no, f"frame index must be >= 0, got {frame}")
    try:
        cls = VehicleClass(cls_id)
    except ValueError:
        raise DetectionStreamError(line_no, f"unknown class id {cls_id}") from None
    box = _clip_box(raw_box, header.width, header.height, line_no)
    if box is None:
        return None
    if want_gt:
        try:
            gt_id = int(obj["gt_id"])
        except (KeyError, TypeError, ValueError) as e:
            raise DetectionStreamError(line_no, f"bad gt_id: {e}") from e
        return GTRecord(frame=frame, gt_id=gt_id, cls=cls, box=box)
    score = obj.get("score", 1.0)
    if not isinstance(score, (int, float)) or not 0.0 <= float(score) <= 1.0:
        raise DetectionStreamError(line_no, f"score must be in [0,1], got {score}")
    return Detection(frame=frame, cls=cls, score=float(score), box=box)


def _iter_lines(data: bytes | str) -> Iterable[str]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    for line in text.splitlines():
        yield line


def parse_detection_stream(data: bytes | str) -> DetectionStream:
    """Parse a detection stream; detections come back frame-sorted (stable)."""
    header = None
    detections: list[Detection] = []
    for line_no, line in enumerate(_iter_lines(data), start=1):
        if not line.strip():
            continue
        if header is None:
            header = _parse_header(line, line_no)
            continue
        det = _parse_record(line, line_no, header, want_gt=False)
        if det is not None:
            detections.append(det)
    if header is None:
        return DetectionStream(header=StreamHeader(0, 0, 0.0), detections=[])
    detections.sort(key=lambda d: d.frame)
    return DetectionStream(header=header, detections=detections)


def parse_gt_stream(data: bytes | str) -> tuple[StreamHeader, list[GTRecord]]:
    """Parse a ground-truth stream; rejects duplicate (frame, gt_id) pairs."""
    header = None
    records: list[GTRecord] = []
    seen: set[tuple[int, int]] = set()
    for line_no, line in enumerate(_iter_lines(data), start=1):
        if not line.strip():
            continue
        if header is None:
            header = _parse_header(line, line_no)
            continue
        rec = _parse_record(line, line_no, header, want_gt=True)
        if rec is None:
            continue
        key = (rec.frame, rec.gt_id)
        if key in seen:
            raise DetectionStreamError(line_no, f"duplicate (frame, gt_id) {key}")
        seen.add(key)
        records.append(rec)
    if header is None:
        return StreamHeader(0, 0, 0.0), []
    records.sort(key=lambda r: r.frame)
    return header, records


def serialize_detection_stream(stream: DetectionStream) -> bytes:
    """Canonical byte form; parse(serialize(x)) round-trips exactly."""
    lines = [stream.header.to_json_line()]
    for d in stream.detections:
        lines.append(
            json.dumps(
                {
                    "frame": d.frame,
                    "cls": int(d.cls),
                    "score": d.score,
                    "box": [d.box.x, d.box.y, d.box.w, d.box.h],
                },
                separators=(",", ":"),
            )
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def serialize_gt_stream(header: StreamHeader, records: Sequence[GTRecord]) -> bytes:
    lines = [header.to_json_line()]
    for r in records:
        lines.append(
            json.dumps(
                {
                    "frame": r.frame,
                    "gt_id": r.gt_id,
                    "cls": int(r.cls),
                    "box": [r.box.x, r.box.y, r.box.w, r.box.h],
                },
                separators=(",", ":"),
            )
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


@dataclass
class DetectionBands:
    """High-band detections feed primary association; the low band feeds
    the tracker's second (recovery) association stage."""

    high: list[Detection]
    low: list[Detection]


def filter_detections(
    dets: Sequence[Detection],
    cfg: DetectorConfig,
    mask: MaskRaster | None = None,
    frame_size: tuple[int, int] | None = None,
    score_low: float = 0.0,
) -> DetectionBands:
    """Split detections into score bands, dropping masked and disallowed ones.

    High band: score >= cfg.score_threshold. Low band: score_low <= score
    < threshold. A detection whose box center falls on an excluded mask pixel
    is dropped from both bands. Input order is preserved within each band.
    """
    if mask is not None and frame_size is not None:
        if (mask.width, mask.height) != frame_size:
            raise ValueError(
                f"mask dimensions {mask.width}x{mask.height} do not match "
                f"frame {frame_size[0]}x{frame_size[1]}"
            )
    high: list[Detection] = []
    low: list[Detection] = []
    for d in dets:
        if d.cls not in cfg.class_allowlist:
            continue
        if mask is not None:
            cx, cy = center(d.box)
            if mask.is_excluded(cx, cy):
                continue
        if d.score >= cfg.score_threshold:
            high.append(d)
        elif d.score >= score_low:
            low.append(d)
    return DetectionBands(high=high, low=low)


class FrameSource:
    """Provider of frame metadata and, optionally, pixel data.

    Sources may be detection-only (headless); then ``get_frame`` raises and
    ``pixel_capable`` is False. ``get_frame`` must be safe to call while a
    sequential consumer runs.
    """

    frame_count: int
    width: int
    height: int
    nominal_fps: float
    pixel_capable: bool = False

    def get_frame(self, index: int) -> np.ndarray:
        raise NotImplementedError("this source has no pixel data")


class DetectionOnlySource(FrameSource):
    """Headless source described entirely by a detection stream header."""

    pixel_capable = False

    def __init__(self, header: StreamHeader, frame_count: int):
        self.width = header.width
        self.height = header.height
        self.nominal_fps = header.fps
        self.frame_count = frame_count


class ArrayFrameSource(FrameSource):
    """In-memory RGB frames, rendered lazily by a painter callback."""

    pixel_capable = True

    def __init__(self, width: int, height: int, frame_count: int, nominal_fps: float,
                 painter: Callable[[int], np.ndarray] | None = None):
        self.width = width
        self.height = height
        self.frame_count = frame_count
        self.nominal_fps = nominal_fps
        self._painter = painter

    def get_frame(self, index: int) -> np.ndarray:
        if not 0 <= index < self.frame_count:
            raise IndexError(f"frame {index} out of range 0..{self.frame_count - 1}")
        if self._painter is None:
            return np.zeros((self.height, self.width, 3), dtype=np.uint8)
        frame = self._painter(index)
        if frame.shape != (self.height, self.width, 3):
            raise ValueError(f"painter returned shape {frame.shape}")
        return frame


class ImageDirectorySource(FrameSource):
    """Directory of numbered image files, one per frame, sorted by name."""

    pixel_capable = True

    def __init__(self, directory: str | Path, nominal_fps: float = 30.0):
        from PIL import Image

        self._image_cls = Image
        self.directory = Path(directory)
        self._files = sorted(
            p for p in self.directory.iterdir()
            if p.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp"}
        )
        if not self._files:
            raise FileNotFoundError(f"no image files in {self.directory}")
        first = np.asarray(Image.open(self._files[0]).convert("RGB"))
        self.height, self.width = first.shape[:2]
        self.frame_count = len(self._files)
        self.nominal_fps = nominal_fps

    def get_frame(self, index: int) -> np.ndarray:
        if not 0 <= index < self.frame_count:
            raise IndexError(f"frame {index} out of range 0..{self.frame_count - 1}")
        img = self._image_cls.open(self._files[index]).convert("RGB")
        return np.asarray(img)


class AdapterError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdapterSpec:
    """External inference process emitting a detection stream on stdout.

    The command is invoked as ``command... [--model MODEL] --source SOURCE``
    and must write a standard detection stream (header line first).
    """

    command: tuple[str, ...]
    model_path: str | None = None

    @classmethod
    def from_json(cls, obj: dict) -> "AdapterSpec":
        return cls(command=tuple(obj["command"]), model_path=obj.get("model"))


def run_inference_adapter(source_ref: str, spec: AdapterSpec, timeout: float = 600.0) -> DetectionStream:
    """Run the external detector and parse its output stream.

    Frames arriving out of order are re-sorted; downstream behavior is then
    identical to a file-sourced stream.
    """
    argv = list(spec.command)
    if spec.model_path:
        argv += ["--model", spec.model_path]
    argv += ["--source", source_ref]
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout)
    except FileNotFoundError as e:
        raise AdapterError(f"inference adapter unavailable: {e}") from e
    except subprocess.TimeoutExpired as e:
        raise AdapterError(f"inference adapter timed out after {timeout}s") from e
    if proc.returncode != 0:
        raise AdapterError(
            f"inference adapter exited with {proc.returncode}: "
            f"{proc.stderr.decode('utf-8', 'replace').strip()[:500]}"
        )
    try:
        return parse_detection_stream(proc.stdout)
    except DetectionStreamError as e:
        raise AdapterError(f"inference adapter emitted malformed record: {e}") from e
