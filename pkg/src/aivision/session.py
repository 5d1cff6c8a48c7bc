"""Sessions: the stateful core behind both the HTTP service and the CLI.

A session owns a directory (config.json, mask.json, zones.json, cache.aiv,
ledgers/, report.json, gallery/) and a small state machine:

    Created -> Running -> Cached -> Counting -> Done
                  \\-> Failed(reason)

Everything on disk is plain JSON or the documented cache format, so a
session survives process restarts and can be driven by the CLI and the
service interchangeably.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import time
import uuid
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .cache import (
    CacheHeader,
    CacheRecord,
    config_hash,
    read_cache,
    video_identity,
    write_cache,
)
from .counting import (
    CountLedger,
    MethodConfig,
    method_config_from_json,
    quick_count,
)
from .detect import (
    AdapterSpec,
    DetectionOnlySource,
    DetectionStream,
    DetectorConfig,
    FrameSource,
    ImageDirectorySource,
    VehicleClass,
    filter_detections,
    parse_detection_stream,
    parse_gt_stream,
    run_inference_adapter,
)
from .gallery import Gallery
from .geom import MaskRaster, Polygon, rasterize_mask
from .metrics import EvalReport, evaluate
from .tracker import Tracker, TrackerParams

PROGRESS_EVERY_FRAMES = 30
PROGRESS_EVERY_SECONDS = 1.0
EVENT_HISTORY = 1000


class SessionState(Enum):
    CREATED = "created"
    RUNNING = "running"
    CACHED = "cached"
    COUNTING = "counting"
    DONE = "done"
    FAILED = "failed"


class SessionError(Exception):
    pass


class SessionNotFound(SessionError):
    pass


class RunRejected(SessionError):
    """Another pipeline already holds this session's run slot."""


class SessionStateError(SessionError):
    """Operation not legal in the session's current state."""


@dataclass(frozen=True)
class StatusEvent:
    session_id: str
    timestamp: float
    level: str  # info | warn | error
    message: str
    frame: int | None = None
    fps: float | None = None

    def to_json(self) -> dict:
        out = {
            "session_id": self.session_id,
            "timestamp": self.timestamp,
            "level": self.level,
            "message": self.message,
        }
        if self.frame is not None:
            out["frame"] = self.frame
        if self.fps is not None:
            out["fps"] = round(self.fps, 2)
        return out


class EventBus:
    """Per-session broadcast channel with bounded history."""

    def __init__(self, session_id: str):
        self.session_id = session_id
        self._lock = threading.Lock()
        self._history: list[StatusEvent] = []
        self._subscribers: list[queue.SimpleQueue] = []
        self._last_ts = 0.0

    def emit(self, level: str, message: str, frame: int | None = None,
             fps: float | None = None) -> StatusEvent:
        with self._lock:
            # timestamps are monotone per session even if the wall clock slips
            ts = max(time.time(), self._last_ts)
            self._last_ts = ts
            event = StatusEvent(self.session_id, ts, level, message, frame, fps)
            self._history.append(event)
            if len(self._history) > EVENT_HISTORY:
                del self._history[: len(self._history) - EVENT_HISTORY]
            for q in self._subscribers:
                q.put(event)
        return event

    def subscribe(self, replay_history: bool = True) -> queue.SimpleQueue:
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self._lock:
            if replay_history:
                for event in self._history:
                    q.put(event)
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.SimpleQueue):
        with self._lock:
            try:
                self._subscribers.remove(q)
            except ValueError:
                pass

    def history(self) -> list[StatusEvent]:
        with self._lock:
            return list(self._history)


def _atomic_write_json(path: str, obj) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2)
    os.replace(tmp, path)


def mask_sibling_path(source_path: str) -> str:
    """Where a source's reusable mask file lives, next to the source."""
    if source_path.endswith(".dets.jsonl"):
        return source_path[: -len(".dets.jsonl")] + ".mask.json"
    return source_path + ".mask.json"


class Session:
    """One video (or detection stream) under analysis."""

    def __init__(self, session_id: str, directory: str,
                 dets_path: str | None,
                 source_path: str | None,
                 adapter: AdapterSpec | None,
                 params: TrackerParams,
                 detector: DetectorConfig,
                 gallery_enabled: bool):
        self.session_id = session_id
        self.directory = directory
        self.dets_path = dets_path
        self.source_path = source_path
        self.adapter = adapter
        self.params = params
        self.detector = detector
        self.gallery_enabled = gallery_enabled

        self.state = SessionState.CREATED
        self.error: str | None = None
        self.frames_done = 0
        self.frames_total = 0
        self.mask_polygons: list[Polygon] = []
        self.zones: dict = {}
        self.ledgers: list[dict] = []
        self.report: EvalReport | None = None
        self.last_run_durations: list[float] = []

        self.events = EventBus(session_id)
        self._run_lock = threading.Lock()
        self._mutate = threading.RLock()
        self._run_thread: threading.Thread | None = None

    # ---- paths ----

    def _path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    @property
    def cache_path(self) -> str:
        return self._path("cache.aiv")

    @property
    def gallery_dir(self) -> str:
        return self._path("gallery")

    def has_cache(self) -> bool:
        return os.path.exists(self.cache_path)

    # ---- persistence ----

    def save_config(self):
        obj = {
            "session_id": self.session_id,
            "dets_path": self.dets_path,
            "source_path": self.source_path,
            "adapter": (
                {"command": list(self.adapter.command), "model": self.adapter.model_path}
                if self.adapter else None
            ),
            "tracker": self.params.to_canonical(),
            "detector": self.detector.to_canonical(),
            "gallery_enabled": self.gallery_enabled,
        }
        _atomic_write_json(self._path("config.json"), obj)

    def save_state(self):
        obj = {
            "state": self.state.value,
            "error": self.error,
            "frames_done": self.frames_done,
            "frames_total": self.frames_total,
        }
        _atomic_write_json(self._path("state.json"), obj)

    def save_mask(self):
        obj = {"polygons": [p.to_json() for p in self.mask_polygons]}
        _atomic_write_json(self._path("mask.json"), obj)

    def save_zones(self):
        _atomic_write_json(self._path("zones.json"), self.zones)

    def describe(self) -> dict:
        with self._mutate:
            return {
                "session_id": self.session_id,
                "state": self.state.value,
                "error": self.error,
                "frames_done": self.frames_done,
                "frames_total": self.frames_total,
                "has_cache": self.has_cache(),
                "pixel_capable": self.source_path is not None,
                "tracker": self.params.to_canonical(),
                "detector": self.detector.to_canonical(),
                "mask_polygons": len(self.mask_polygons),
                "zones": self.zones,
                "ledger_count": len(self.ledgers),
                # disk-backed like has_cache, so a reloaded session still
                # reports evaluations done by an earlier process
                "has_report": os.path.isfile(self._path("report.json")),
            }

    # ---- configuration surface ----

    def set_mask(self, polygons: Iterable[Polygon], save_sibling: bool = True):
        with self._mutate:
            self.mask_polygons = list(polygons)
            self.save_mask()
            if save_sibling:
                ref = self.source_path or self.dets_path
                if ref:
                    _atomic_write_json(
                        mask_sibling_path(ref),
                        {"polygons": [p.to_json() for p in self.mask_polygons]},
                    )
            self.events.emit("info", f"mask set: {len(self.mask_polygons)} polygon(s)")

    def set_zones(self, zones: dict):
        """Accepts {"finish_line": {...}} and/or {"motion_vector": {...}};
        validates both before storing."""
        for key in zones:
            if key not in ("finish_line", "motion_vector"):
                raise ValueError(f"unknown zone kind {key!r}")
            method_config_from_json({key: zones[key]})
        with self._mutate:
            self.zones = dict(zones)
            self.save_zones()
            self.events.emit("info", f"zones updated: {', '.join(sorted(zones)) or 'none'}")

    # ---- sources ----

    def _load_stream(self) -> DetectionStream:
        if self.dets_path is not None:
            with open(self.dets_path, "rb") as f:
                return parse_detection_stream(f.read())
        if self.adapter is not None:
            return run_inference_adapter(self.source_path or "", self.adapter)
        raise SessionError("session has neither a detection file nor an adapter")

    def _frame_source(self, stream: DetectionStream) -> FrameSource:
        if self.source_path is not None and os.path.isdir(self.source_path):
            return ImageDirectorySource(self.source_path,
                                        nominal_fps=stream.header.fps or 30.0)
        return DetectionOnlySource(stream.header, stream.frame_count)

    def frame_image(self, index: int):
        """Decoded RGB frame for the service's frame endpoint."""
        stream = self._load_stream()
        source = self._frame_source(stream)
        if not source.pixel_capable:
            raise SessionStateError("session source has no pixel data")
        return source.get_frame(index)

    # ---- pipeline ----

    def start_run(self, wait: bool = False) -> None:
        """Run filter -> track -> (gallery) -> cache in a worker thread.

        Rejects if a run or count already holds the session; otherwise the
        caller may immediately poll state or subscribe to events.
        """
        if not self._run_lock.acquire(blocking=False):
            raise RunRejected("session already has a running pipeline")

        def worker():
            try:
                self._run_pipeline()
            finally:
                self._run_lock.release()

        try:
            self._run_thread = threading.Thread(target=worker, daemon=True,
                                                name=f"run-{self.session_id}")
            self._run_thread.start()
        except BaseException:
            self._run_lock.release()
            raise
        if wait:
            self._run_thread.join()
            if self.state is SessionState.FAILED:
                raise SessionError(self.error or "pipeline failed")

    def wait_run(self, timeout: float | None = None):
        t = self._run_thread
        if t is not None:
            t.join(timeout)

    def _run_pipeline(self):
        with self._mutate:
            self.state = SessionState.RUNNING
            self.error = None
            self.frames_done = 0
            self.save_state()
        self.events.emit("info", "run started")
        frame_at_error: int | None = None
        try:
            stream = self._load_stream()
            source = self._frame_source(stream)
            width, height = source.width, source.height
            frame_count = source.frame_count
            if source.pixel_capable and stream.frame_count > frame_count:
                raise SessionError(
                    f"detection stream covers {stream.frame_count} frames but "
                    f"source has only {frame_count}"
                )
            with self._mutate:
                self.frames_total = frame_count
                self.save_state()

            mask: MaskRaster | None = None
            if self.mask_polygons:
                mask = rasterize_mask(self.mask_polygons, width, height)

            use_pixels = source.pixel_capable and (
                self.params.appearance_enabled or self.gallery_enabled
            )
            gallery = Gallery(self.gallery_dir) if (
                self.gallery_enabled and source.pixel_capable
            ) else None

            tracker = Tracker(self.params)
            by_frame = stream.by_frame()
            records: list[CacheRecord] = []
            durations: list[float] = []
            last_report = time.monotonic()
            last_report_frame = 0

            for f in range(frame_count):
                frame_at_error = f
                t0 = time.monotonic()
                bands = filter_detections(
                    by_frame.get(f, []), self.detector, mask,
                    frame_size=(width, height), score_low=self.params.score_low,
                )
                raster = source.get_frame(f) if use_pixels else None
                snaps = tracker.step(f, bands.high, bands.low, raster)
                if gallery is not None and raster is not None:
                    for snap in snaps:
                        gallery.register_template(
                            snap, raster, frame=f,
                            min_score=self.params.score_high,
                        )
                records.append(CacheRecord(frame=f, tracks=tuple(snaps)))
                durations.append(max(time.monotonic() - t0, 1e-9))

                done = f + 1
                now = time.monotonic()
                if (done - last_report_frame >= PROGRESS_EVERY_FRAMES
                        or now - last_report >= PROGRESS_EVERY_SECONDS
                        or done == frame_count):
                    recent = durations[last_report_frame:done]
                    fps = len(recent) / max(sum(recent), 1e-9)
                    with self._mutate:
                        self.frames_done = done
                    self.events.emit("info", f"processed {done}/{frame_count} frames",
                                     frame=f, fps=fps)
                    last_report = now
                    last_report_frame = done
            frame_at_error = None

            header = CacheHeader(
                video_path=self.source_path or self.dets_path or "",
                video_digest=self._source_digest(),
                width=width, height=height, frame_count=frame_count,
                nominal_fps=source.nominal_fps,
                config_hash=config_hash(self.params, self.detector),
                created_at=time.time(),
            )
            write_cache(header, records, self.cache_path)
            with self._mutate:
                self.frames_done = frame_count
                self.last_run_durations = durations
                self.state = SessionState.CACHED
                self.save_state()
            self.events.emit("info", "run complete; cache written")
        except Exception as e:
            prefix = "" if frame_at_error is None else f"frame {frame_at_error}: "
            with self._mutate:
                self.state = SessionState.FAILED
                self.error = f"{prefix}{e}"
                self.save_state()
            self.events.emit("error", self.error)

    def _source_digest(self) -> str:
        ref = self.dets_path or self.source_path
        if ref and os.path.isfile(ref):
            return video_identity(ref)
        return ""

    # ---- counting ----

    def _cache_is_current(self) -> bool:
        if not self.has_cache():
            return False
        header, records = read_cache(self.cache_path)
        records.close()
        return header.config_hash == config_hash(self.params, self.detector)

    def run_count(self, config: MethodConfig, quick: bool = True) -> CountLedger:
        """Quick counts straight from the cache; Full re-runs the pipeline
        first when there is no cache or it was built with other settings."""
        if quick and not self.has_cache():
            raise SessionStateError("quick count needs a cache; start a run first")
        if not quick and not self._cache_is_current():
            self.start_run(wait=True)
        if not self._run_lock.acquire(blocking=False):
            raise RunRejected("session busy with a running pipeline")
        try:
            with self._mutate:
                prior = self.state
                self.state = SessionState.COUNTING
                self.save_state()
            try:
                ledger = quick_count(self.cache_path, config,
                                     params=self.params, detector=self.detector)
            except BaseException:
                with self._mutate:
                    self.state = prior
                    self.save_state()
                raise
            entry = {
                "seq": len(self.ledgers),
                "mode": "quick" if quick else "full",
                "config": config.to_json(),
                "ledger": ledger.snapshot(),
            }
            with self._mutate:
                self.ledgers.append(entry)
                os.makedirs(self._path("ledgers"), exist_ok=True)
                _atomic_write_json(
                    os.path.join(self._path("ledgers"), f"{entry['seq']:03d}.json"),
                    entry,
                )
                self.state = SessionState.DONE
                self.save_state()
            totals = ", ".join(f"{k}: {v}" for k, v in entry["ledger"]["totals"].items())
            self.events.emit("info", f"count complete ({entry['mode']}): {totals or 'no vehicles'}")
            return ledger
        finally:
            self._run_lock.release()

    def latest_ledger(self) -> dict | None:
        with self._mutate:
            return self.ledgers[-1] if self.ledgers else None

    # ---- evaluation ----

    def run_eval(self, gt_path: str) -> EvalReport:
        if not self.has_cache():
            raise SessionStateError("evaluation needs a cache; start a run first")
        if not os.path.exists(gt_path):
            raise SessionError(f"ground-truth file not found: {gt_path}")
        with open(gt_path, "rb") as f:
            _, gt_records = parse_gt_stream(f.read())
        header, record_iter = read_cache(self.cache_path)
        records = list(record_iter)
        over = [g.frame for g in gt_records if g.frame >= header.frame_count]
        if over:
            raise SessionError(
                f"ground truth extends to frame {max(over)} but cache has "
                f"{header.frame_count} frames"
            )
        preds_by_frame = {rec.frame: rec.tracks for rec in records}

        counted = gt_counts = None
        last = self.latest_ledger()
        if last is not None:
            counted = {}
            for name, n in last["ledger"]["totals"].items():
                counted[VehicleClass[name.upper()]] = n
            gt_ids: dict[VehicleClass, set] = {}
            for g in gt_records:
                gt_ids.setdefault(g.cls, set()).add(g.gt_id)
            gt_counts = {cls: len(ids) for cls, ids in gt_ids.items()}

        report = evaluate(gt_records, preds_by_frame, frames=header.frame_count,
                          counted_per_class=counted, gt_count_per_class=gt_counts)
        with self._mutate:
            self.report = report
            with open(self._path("report.json"), "w") as f:
                f.write(report.to_json())
            self.state = SessionState.DONE
            self.save_state()
        self.events.emit("info", "evaluation complete")
        return report

    # ---- replay ----

    def open_cache(self):
        if not self.has_cache():
            raise SessionStateError("session has no cache yet")
        return read_cache(self.cache_path)


class SessionManager:
    """Registry of sessions under one data directory."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}

    def create_session(self, dets_path: str | None = None,
                       source_path: str | None = None,
                       adapter: AdapterSpec | None = None,
                       params: TrackerParams | None = None,
                       detector: DetectorConfig | None = None,
                       gallery_enabled: bool = True,
                       session_id: str | None = None) -> Session:
        if dets_path is None and adapter is None:
            raise SessionError("a detection file or an inference adapter is required")
        if dets_path is not None and not os.path.isfile(dets_path):
            raise SessionError(f"detection file not found: {dets_path}")
        if source_path is not None and not os.path.exists(source_path):
            raise SessionError(f"source not found: {source_path}")
        params = params or TrackerParams()
        detector = detector or DetectorConfig()

        session_id = session_id or uuid.uuid4().hex[:12]
        directory = os.path.join(self.root, session_id)
        if os.path.exists(directory):
            raise SessionError(f"session directory already exists: {directory}")
        os.makedirs(directory)
        session = Session(session_id, directory, dets_path, source_path,
                          adapter, params, detector, gallery_enabled)
        session.save_config()
        session.save_state()

        ref = source_path or dets_path
        sibling = mask_sibling_path(ref) if ref else None
        if sibling and os.path.exists(sibling):
            with open(sibling) as f:
                obj = json.load(f)
            polys = [Polygon.from_json(p) for p in obj.get("polygons", [])]
            session.set_mask(polys, save_sibling=False)
            session.events.emit("info", f"loaded saved mask from {os.path.basename(sibling)}")
        session.events.emit("info", "session created")

        with self._lock:
            self._sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        directory = os.path.join(self.root, session_id)
        if not os.path.isdir(directory):
            raise SessionNotFound(f"no session {session_id}")
        session = load_session(directory)
        with self._lock:
            return self._sessions.setdefault(session_id, session)

    def list_ids(self) -> list[str]:
        with self._lock:
            known = set(self._sessions)
        if os.path.isdir(self.root):
            for name in os.listdir(self.root):
                if os.path.isfile(os.path.join(self.root, name, "config.json")):
                    known.add(name)
        return sorted(known)


def load_session(directory: str) -> Session:
    """Rebuild a session from its directory; transient states from a dead
    process degrade to the nearest durable one."""
    config_path = os.path.join(directory, "config.json")
    if not os.path.isfile(config_path):
        raise SessionNotFound(f"not a session directory: {directory}")
    with open(config_path) as f:
        cfg = json.load(f)
    adapter = None
    if cfg.get("adapter"):
        adapter = AdapterSpec(command=tuple(cfg["adapter"]["command"]),
                              model_path=cfg["adapter"].get("model"))
    session = Session(
        session_id=cfg["session_id"],
        directory=directory,
        dets_path=cfg.get("dets_path"),
        source_path=cfg.get("source_path"),
        adapter=adapter,
        params=TrackerParams.from_json(cfg.get("tracker", {})),
        detector=DetectorConfig.from_json(cfg.get("detector", {})),
        gallery_enabled=bool(cfg.get("gallery_enabled", True)),
    )

    state_path = os.path.join(directory, "state.json")
    if os.path.isfile(state_path):
        with open(state_path) as f:
            st = json.load(f)
        state = SessionState(st.get("state", "created"))
        if state in (SessionState.RUNNING, SessionState.COUNTING):
            state = SessionState.CACHED if session.has_cache() else SessionState.CREATED
        session.state = state
        session.error = st.get("error")
        session.frames_done = int(st.get("frames_done", 0))
        session.frames_total = int(st.get("frames_total", 0))

    mask_path = os.path.join(directory, "mask.json")
    if os.path.isfile(mask_path):
        with open(mask_path) as f:
            obj = json.load(f)
        session.mask_polygons = [Polygon.from_json(p) for p in obj.get("polygons", [])]

    zones_path = os.path.join(directory, "zones.json")
    if os.path.isfile(zones_path):
        with open(zones_path) as f:
            session.zones = json.load(f)

    ledger_dir = os.path.join(directory, "ledgers")
    if os.path.isdir(ledger_dir):
        for name in sorted(os.listdir(ledger_dir)):
            if name.endswith(".json"):
                with open(os.path.join(ledger_dir, name)) as f:
                    session.ledgers.append(json.load(f))

    return session


def data_root() -> str:
    return os.environ.get("AIV_DATA_DIR", os.path.join(os.path.expanduser("~"), ".aivision"))
