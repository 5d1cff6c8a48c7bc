"""Track-output cache: binary per-frame records behind a JSON header.

Layout of a .aiv file:

  line 1            JSON header, newline-terminated
  records           u32 payload length, then payload:
                    u32 frame, u16 track count,
                    per track u32 id, u8 class, 4 x f32 box, f32 score
  offset table      u64 file offset of each record, in frame order
  trailer           u64 offset-table position + magic "AIV1"

All integers and floats little-endian. The write is atomic (temp file plus
rename) so an interrupted run never leaves a half-valid cache behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .detect import DetectorConfig, VehicleClass
from .geom import BBox
from .tracker import TrackerParams, TrackSnapshot

SCHEMA_VERSION = 1
MAGIC = b"AIV1"
_TRACK_FMT = struct.Struct("<IB5f")
_RECORD_HEAD = struct.Struct("<IH")
_LEN_FMT = struct.Struct("<I")
_TRAILER_FMT = struct.Struct("<Q4s")
_OFFSET_FMT = struct.Struct("<Q")
_IDENTITY_PREFIX = 1 << 20


class CacheError(Exception):
    pass


class CacheVersionError(CacheError):
    pass


class CacheTruncatedError(CacheError):
    def __init__(self, last_good_frame: int | None):
        self.last_good_frame = last_good_frame
        where = "no complete record" if last_good_frame is None else f"frame {last_good_frame}"
        super().__init__(f"cache truncated; last valid record: {where}")


class CacheConfigMismatch(CacheError):
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(
            "cache was built with a different tracker/detector configuration "
            f"(cache {found[:12]}, requested {expected[:12]}); re-run the "
            "pipeline to rebuild it"
        )


@dataclass(frozen=True)
class CacheHeader:
    video_path: str
    video_digest: str
    width: int
    height: int
    frame_count: int
    nominal_fps: float
    config_hash: str
    created_at: float
    schema_version: int = SCHEMA_VERSION

    def to_json_line(self) -> bytes:
        obj = {
            "schema_version": self.schema_version,
            "video_path": self.video_path,
            "video_digest": self.video_digest,
            "width": self.width,
            "height": self.height,
            "frame_count": self.frame_count,
            "nominal_fps": self.nominal_fps,
            "config_hash": self.config_hash,
            "created_at": self.created_at,
        }
        return (json.dumps(obj, separators=(",", ":")) + "\n").encode()

    @classmethod
    def from_json_line(cls, line: bytes) -> "CacheHeader":
        try:
            obj = json.loads(line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CacheError(f"unreadable cache header: {e}") from e
        version = obj.get("schema_version")
        if version != SCHEMA_VERSION:
            raise CacheVersionError(
                f"cache schema version {version!r} not supported (expected {SCHEMA_VERSION})"
            )
        missing = [k for k in ("video_digest", "config_hash", "frame_count") if k not in obj]
        if missing:
            raise CacheError(f"cache header missing fields: {', '.join(missing)}")
        return cls(
            video_path=obj.get("video_path", ""),
            video_digest=obj["video_digest"],
            width=int(obj.get("width", 0)),
            height=int(obj.get("height", 0)),
            frame_count=int(obj["frame_count"]),
            nominal_fps=float(obj.get("nominal_fps", 0.0)),
            config_hash=obj["config_hash"],
            created_at=float(obj.get("created_at", 0.0)),
            schema_version=version,
        )


def _f32(value: float) -> float:
    return float(np.float32(value))


@dataclass(frozen=True)
class CacheRecord:
    """One frame's track outputs, on the storage grid.

    Boxes and scores are quantized to f32 at construction, because that is
    the on-disk precision; live consumers and cache readers therefore see
    bit-identical values, which is what makes replay counting equal live
    counting exactly.
    """

    frame: int
    tracks: tuple[TrackSnapshot, ...]

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(
            TrackSnapshot(
                track_id=t.track_id, cls=t.cls,
                box=BBox(_f32(t.box.x), _f32(t.box.y), _f32(t.box.w), _f32(t.box.h)),
                score=_f32(t.score),
            )
            for t in self.tracks
        ))


def video_identity(path: str) -> str:
    """Digest of the first MiB plus total byte length.

    Full-file hashing of long videos would stall session startup, so
    identity is approximate by design; a swapped file with identical head
    and size goes undetected.
    """
    h = hashlib.sha256()
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        h.update(f.read(_IDENTITY_PREFIX))
    h.update(str(size).encode())
    return h.hexdigest()


def config_hash(params: TrackerParams, detector: DetectorConfig) -> str:
    """Digest of the canonical config serialization; key order never matters."""
    canon = {"tracker": params.to_canonical(), "detector": detector.to_canonical()}
    blob = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _pack_record(rec: CacheRecord) -> bytes:
    parts = [_RECORD_HEAD.pack(rec.frame, len(rec.tracks))]
    for t in rec.tracks:
        parts.append(_TRACK_FMT.pack(
            t.track_id, int(t.cls), t.box.x, t.box.y, t.box.w, t.box.h, t.score,
        ))
    payload = b"".join(parts)
    return _LEN_FMT.pack(len(payload)) + payload


def _unpack_payload(payload: bytes) -> CacheRecord:
    frame, count = _RECORD_HEAD.unpack_from(payload, 0)
    need = _RECORD_HEAD.size + count * _TRACK_FMT.size
    if len(payload) != need:
        raise CacheError(f"record for frame {frame} has wrong size")
    tracks = []
    off = _RECORD_HEAD.size
    for _ in range(count):
        tid, cls_id, x, y, w, h, score = _TRACK_FMT.unpack_from(payload, off)
        off += _TRACK_FMT.size
        tracks.append(TrackSnapshot(
            track_id=tid, cls=VehicleClass(cls_id),
            box=BBox(x, y, w, h), score=score,
        ))
    return CacheRecord(frame=frame, tracks=tuple(tracks))


def write_cache(header: CacheHeader, records: Iterable[CacheRecord], path: str) -> int:
    """Write atomically; returns bytes written. Records must be dense from 0."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".aiv-", dir=directory)
    offsets: list[int] = []
    expect = 0
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header.to_json_line())
            for rec in records:
                if rec.frame != expect:
                    raise CacheError(
                        f"records must be dense from 0: expected frame {expect}, got {rec.frame}"
                    )
                offsets.append(f.tell())
                f.write(_pack_record(rec))
                expect += 1
            if expect != header.frame_count:
                raise CacheError(
                    f"header says {header.frame_count} frames, got {expect} records"
                )
            table_at = f.tell()
            for off in offsets:
                f.write(_OFFSET_FMT.pack(off))
            f.write(_TRAILER_FMT.pack(table_at, MAGIC))
            f.flush()
            os.fsync(f.fileno())
            total = f.tell()
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    return total


def _read_header(f) -> CacheHeader:
    line = f.readline()
    if not line.endswith(b"\n"):
        raise CacheError("cache header line truncated")
    return CacheHeader.from_json_line(line)


def read_cache(path: str) -> tuple[CacheHeader, Iterator[CacheRecord]]:
    """Header eagerly, records lazily. The record iterator opens the file
    on first use (so an unconsumed stream holds nothing open) and raises
    CacheTruncatedError naming the last intact frame if the file ends
    mid-record."""
    with open(path, "rb") as f:
        header = _read_header(f)
        start = f.tell()
        data_end = _data_end(f)

    def stream() -> Iterator[CacheRecord]:
        last_good: int | None = None
        with open(path, "rb") as f:
            f.seek(start)
            for _ in range(header.frame_count):
                if f.tell() >= data_end:
                    raise CacheTruncatedError(last_good)
                raw_len = f.read(_LEN_FMT.size)
                if len(raw_len) < _LEN_FMT.size:
                    raise CacheTruncatedError(last_good)
                (n,) = _LEN_FMT.unpack(raw_len)
                payload = f.read(n)
                if len(payload) < n:
                    raise CacheTruncatedError(last_good)
                rec = _unpack_payload(payload)
                last_good = rec.frame
                yield rec

    return header, stream()


def _data_end(f) -> int:
    """File offset where records stop (the offset table begins)."""
    pos = f.tell()
    f.seek(0, os.SEEK_END)
    end = f.tell()
    if end - pos < _TRAILER_FMT.size:
        f.seek(pos)
        return end  # no room for a trailer; let the stream hit EOF
    f.seek(end - _TRAILER_FMT.size)
    table_at, magic = _TRAILER_FMT.unpack(f.read(_TRAILER_FMT.size))
    f.seek(pos)
    if magic != MAGIC or not pos <= table_at <= end:
        return end
    return table_at


def read_record_at(path: str, frame: int) -> CacheRecord:
    """Random access through the trailing offset table."""
    with open(path, "rb") as f:
        header = _read_header(f)
        if not 0 <= frame < header.frame_count:
            raise CacheError(f"frame {frame} outside cache range 0..{header.frame_count - 1}")
        f.seek(0, os.SEEK_END)
        end = f.tell()
        f.seek(end - _TRAILER_FMT.size)
        table_at, magic = _TRAILER_FMT.unpack(f.read(_TRAILER_FMT.size))
        if magic != MAGIC:
            raise CacheError("cache trailer missing; file truncated or foreign")
        f.seek(table_at + frame * _OFFSET_FMT.size)
        (off,) = _OFFSET_FMT.unpack(f.read(_OFFSET_FMT.size))
        f.seek(off)
        (n,) = _LEN_FMT.unpack(f.read(_LEN_FMT.size))
        return _unpack_payload(f.read(n))


def require_config(header: CacheHeader, params: TrackerParams,
                   detector: DetectorConfig) -> None:
    expected = config_hash(params, detector)
    if header.config_hash != expected:
        raise CacheConfigMismatch(expected=expected, found=header.config_hash)


@dataclass(frozen=True)
class AsFast:
    pass


@dataclass(frozen=True)
class RealTime:
    fps: float

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")


Pacing = AsFast | RealTime


class ReplayConsumerError(CacheError):
    def __init__(self, frame: int, cause: Exception):
        self.frame = frame
        super().__init__(f"replay consumer failed at frame {frame}: {cause}")


@dataclass(frozen=True)
class ReplayStats:
    frames: int
    wall_seconds: float


def replay(records: Iterable[CacheRecord],
           consumers: Sequence[Callable[[CacheRecord], None]],
           pacing: Pacing = AsFast()) -> ReplayStats:
    """Feed records to every consumer in order.

    RealTime paces against an absolute schedule (frame i is released at
    start + (i+1)/fps) so sleep jitter does not accumulate.
    """
    start = time.monotonic()
    n = 0
    for rec in records:
        if isinstance(pacing, RealTime):
            target = start + (n + 1) / pacing.fps
            delay = target - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        for consumer in consumers:
            try:
                consumer(rec)
            except Exception as e:
                raise ReplayConsumerError(rec.frame, e) from e
        n += 1
    return ReplayStats(frames=n, wall_seconds=time.monotonic() - start)
