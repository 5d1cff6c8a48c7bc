import glob
import json
import math
import os
import struct

import numpy as np
import pytest

from aivision.cache import (
    AsFast,
    CacheConfigMismatch,
    CacheError,
    CacheHeader,
    CacheRecord,
    CacheTruncatedError,
    CacheVersionError,
    RealTime,
    ReplayConsumerError,
    config_hash,
    read_cache,
    read_record_at,
    replay,
    require_config,
    video_identity,
    write_cache,
)
from aivision.detect import DetectorConfig, VehicleClass
from aivision.geom import BBox
from aivision.tracker import TrackerParams, TrackSnapshot


def snap(tid, x=100.0, y=100.0, w=20.0, h=16.0, cls=VehicleClass.CAR, score=0.9):
    return TrackSnapshot(track_id=tid, cls=cls, box=BBox(x, y, w, h), score=score)


def sample_records(n, tracks_per_frame=1):
    records = []
    for f in range(n):
        tracks = tuple(snap(tid=f * 10 + k, x=10.0 * f + k, y=5.0 + k)
                       for k in range(tracks_per_frame))
        records.append(CacheRecord(frame=f, tracks=tracks))
    return records


def make_header(n, params=None, detector=None):
    return CacheHeader(
        video_path="clip.dets.jsonl", video_digest="ab" * 32,
        width=640, height=480, frame_count=n, nominal_fps=30.0,
        config_hash=config_hash(params or TrackerParams(), detector or DetectorConfig()),
        created_at=1700000000.0,
    )


def build(tmp_path, n=5, name="clip.aiv", tracks_per_frame=1):
    records = sample_records(n, tracks_per_frame)
    path = str(tmp_path / name)
    write_cache(make_header(n), records, path)
    return path, records


class TestHeader:
    def test_json_line_round_trip(self):
        header = make_header(12)
        assert CacheHeader.from_json_line(header.to_json_line()) == header

    def test_unsupported_schema_version(self):
        obj = json.loads(make_header(1).to_json_line())
        obj["schema_version"] = 99
        with pytest.raises(CacheVersionError):
            CacheHeader.from_json_line(json.dumps(obj).encode() + b"\n")

    def test_missing_fields_named(self):
        obj = json.loads(make_header(1).to_json_line())
        del obj["config_hash"]
        with pytest.raises(CacheError, match="config_hash"):
            CacheHeader.from_json_line(json.dumps(obj).encode() + b"\n")

    def test_garbage_header(self):
        with pytest.raises(CacheError):
            CacheHeader.from_json_line(b"\x00\xffnot json\n")


class TestRecordQuantization:
    def test_f32_grid_applied_at_construction(self):
        rec = CacheRecord(frame=0, tracks=(snap(1, x=0.1, score=math.pi / 4),))
        assert rec.tracks[0].box.x == float(np.float32(0.1))
        assert rec.tracks[0].box.x != 0.1
        assert rec.tracks[0].score == float(np.float32(math.pi / 4))

    def test_quantization_idempotent(self):
        rec = CacheRecord(frame=0, tracks=(snap(1, x=1 / 3, y=2 / 7),))
        again = CacheRecord(frame=0, tracks=rec.tracks)
        assert again == rec


class TestConfigHash:
    def test_stable_across_json_round_trip(self):
        params = TrackerParams(iou_threshold=0.3, min_hits_to_activate=2)
        rebuilt = TrackerParams.from_json(params.to_canonical())
        assert config_hash(params, DetectorConfig()) == config_hash(rebuilt, DetectorConfig())

    def test_tracker_change_changes_hash(self):
        base = config_hash(TrackerParams(), DetectorConfig())
        assert config_hash(TrackerParams(iou_threshold=0.31), DetectorConfig()) != base

    def test_detector_change_changes_hash(self):
        base = config_hash(TrackerParams(), DetectorConfig())
        other = DetectorConfig(score_threshold=0.31)
        assert config_hash(TrackerParams(), other) != base


class TestVideoIdentity:
    MIB = 1 << 20

    def test_equal_files_equal_digest(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        a.write_bytes(b"hello video")
        b.write_bytes(b"hello video")
        assert video_identity(str(a)) == video_identity(str(b))

    def test_content_change_changes_digest(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        a.write_bytes(b"hello video")
        b.write_bytes(b"jello video")
        assert video_identity(str(a)) != video_identity(str(b))

    def test_length_included(self, tmp_path):
        # same first MiB, different total size: must differ
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        prefix = b"v" * self.MIB
        a.write_bytes(prefix + b"x")
        b.write_bytes(prefix + b"xy")
        assert video_identity(str(a)) != video_identity(str(b))

    def test_tail_beyond_prefix_ignored(self, tmp_path):
        # documented approximation: identical head and size collide
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        prefix = b"v" * self.MIB
        a.write_bytes(prefix + b"tail-one")
        b.write_bytes(prefix + b"tail-two")
        assert video_identity(str(a)) == video_identity(str(b))


class TestWriteRead:
    def test_round_trip_exact(self, tmp_path):
        # awkward floats: the f32 grid at construction makes equality exact
        records = [
            CacheRecord(frame=0, tracks=(snap(1, x=math.pi, y=1 / 3, score=0.123456789),
                                         snap(2, x=0.1, cls=VehicleClass.BUS))),
            CacheRecord(frame=1, tracks=()),
            CacheRecord(frame=2, tracks=(snap(3, cls=VehicleClass.TRUCK, score=1.0),)),
        ]
        path = str(tmp_path / "c.aiv")
        write_cache(make_header(3), records, path)
        header, stream = read_cache(path)
        assert header == make_header(3)
        assert list(stream) == records

    def test_returns_bytes_written(self, tmp_path):
        path = str(tmp_path / "c.aiv")
        total = write_cache(make_header(2), sample_records(2), path)
        assert total == os.path.getsize(path)

    def test_empty_cache(self, tmp_path):
        path = str(tmp_path / "empty.aiv")
        write_cache(make_header(0), [], path)
        header, stream = read_cache(path)
        assert header.frame_count == 0
        assert list(stream) == []

    def test_frame_gap_rejected(self, tmp_path):
        records = [CacheRecord(frame=0, tracks=()), CacheRecord(frame=2, tracks=())]
        with pytest.raises(CacheError, match="dense"):
            write_cache(make_header(2), records, str(tmp_path / "c.aiv"))

    def test_count_mismatch_rejected(self, tmp_path):
        with pytest.raises(CacheError, match="2 frames, got 1"):
            write_cache(make_header(2), sample_records(1), str(tmp_path / "c.aiv"))

    def test_failed_write_leaves_nothing(self, tmp_path):
        def doomed():
            yield CacheRecord(frame=0, tracks=())
            raise RuntimeError("detector died")

        path = str(tmp_path / "c.aiv")
        with pytest.raises(RuntimeError):
            write_cache(make_header(2), doomed(), path)
        assert not os.path.exists(path)
        assert glob.glob(str(tmp_path / ".aiv-*")) == []

    def test_failed_overwrite_keeps_original(self, tmp_path):
        path, records = build(tmp_path, n=2)

        def doomed():
            yield CacheRecord(frame=0, tracks=())
            raise RuntimeError("boom")

        with pytest.raises(RuntimeError):
            write_cache(make_header(3), doomed(), path)
        header, stream = read_cache(path)
        assert header.frame_count == 2
        assert list(stream) == records

    def test_overwrite_replaces(self, tmp_path):
        path, _ = build(tmp_path, n=1)
        newer = sample_records(3)
        write_cache(make_header(3), newer, path)
        header, stream = read_cache(path)
        assert header.frame_count == 3
        assert list(stream) == newer

    def test_header_read_is_lazy_about_records(self, tmp_path):
        path, records = build(tmp_path, n=4)
        header, stream = read_cache(path)
        assert header.frame_count == 4
        # consuming later still works
        assert [r.frame for r in stream] == [0, 1, 2, 3]


def record_span(path):
    """(data_start, per_record_size) for caches holding one track per frame."""
    with open(path, "rb") as f:
        f.readline()
        start = f.tell()
    size = 4 + 6 + struct.calcsize("<IB5f")
    return start, size


class TestTruncation:
    def test_cut_mid_record_names_last_good_frame(self, tmp_path):
        path, _ = build(tmp_path, n=5)
        start, size = record_span(path)
        data = open(path, "rb").read()
        open(path, "wb").write(data[: start + 2 * size + 17])
        _, stream = read_cache(path)
        with pytest.raises(CacheTruncatedError, match="frame 1") as info:
            list(stream)
        assert info.value.last_good_frame == 1

    def test_cut_at_record_boundary(self, tmp_path):
        path, _ = build(tmp_path, n=5)
        start, size = record_span(path)
        data = open(path, "rb").read()
        open(path, "wb").write(data[: start + 3 * size])
        _, stream = read_cache(path)
        with pytest.raises(CacheTruncatedError) as info:
            list(stream)
        assert info.value.last_good_frame == 2

    def test_cut_inside_header(self, tmp_path):
        path, _ = build(tmp_path, n=2)
        data = open(path, "rb").read()
        open(path, "wb").write(data[:10])
        with pytest.raises(CacheError, match="header"):
            read_cache(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "zero.aiv"
        path.write_bytes(b"")
        with pytest.raises(CacheError):
            read_cache(str(path))

    def test_no_complete_record(self, tmp_path):
        path, _ = build(tmp_path, n=3)
        start, _ = record_span(path)
        data = open(path, "rb").read()
        open(path, "wb").write(data[: start + 2])
        _, stream = read_cache(path)
        with pytest.raises(CacheTruncatedError) as info:
            list(stream)
        assert info.value.last_good_frame is None

    def test_corrupt_trailer_leaves_sequential_read_intact(self, tmp_path):
        path, records = build(tmp_path, n=3)
        with open(path, "r+b") as f:
            f.seek(-4, os.SEEK_END)
            f.write(b"XXXX")
        _, stream = read_cache(path)
        assert list(stream) == records
        with pytest.raises(CacheError, match="trailer"):
            read_record_at(path, 0)


class TestRandomAccess:
    def test_matches_sequential(self, tmp_path):
        path, records = build(tmp_path, n=6, tracks_per_frame=3)
        for i, expected in enumerate(records):
            assert read_record_at(path, i) == expected

    def test_out_of_range(self, tmp_path):
        path, _ = build(tmp_path, n=3)
        with pytest.raises(CacheError, match="outside"):
            read_record_at(path, 3)
        with pytest.raises(CacheError, match="outside"):
            read_record_at(path, -1)


class TestRequireConfig:
    def test_match_passes(self, tmp_path):
        header = make_header(0)
        require_config(header, TrackerParams(), DetectorConfig())

    def test_mismatch_raises_with_digests(self):
        header = make_header(0)
        other = TrackerParams(score_high=0.8)
        with pytest.raises(CacheConfigMismatch, match="re-run") as info:
            require_config(header, other, DetectorConfig())
        assert info.value.found == header.config_hash
        assert info.value.expected == config_hash(other, DetectorConfig())


class TestReplay:
    def test_consumers_see_every_record_in_order(self):
        records = sample_records(6)
        seen_a, seen_b = [], []
        stats = replay(records, [seen_a.append, seen_b.append])
        assert seen_a == records
        assert seen_b == records
        assert stats.frames == 6

    def test_replays_are_identical(self, tmp_path):
        path, _ = build(tmp_path, n=5, tracks_per_frame=2)
        runs = []
        for _ in range(2):
            _, stream = read_cache(path)
            got = []
            replay(stream, [got.append])
            runs.append(got)
        assert runs[0] == runs[1]

    def test_consumer_failure_names_frame(self):
        records = sample_records(5)

        def fragile(rec):
            if rec.frame == 2:
                raise ValueError("bad overlay")

        with pytest.raises(ReplayConsumerError, match="frame 2") as info:
            replay(records, [fragile])
        assert info.value.frame == 2
        assert isinstance(info.value.__cause__, ValueError)

    def test_as_fast_ignores_wall_clock(self):
        stats = replay(sample_records(200), [lambda rec: None], AsFast())
        assert stats.frames == 200
        assert stats.wall_seconds < 1.0

    def test_real_time_paces_to_schedule(self):
        stats = replay(sample_records(10), [lambda rec: None], RealTime(100.0))
        # 10 frames at 100 fps: the schedule releases the last at 0.1 s
        assert stats.wall_seconds >= 0.095
        assert stats.wall_seconds < 0.5

    def test_real_time_rejects_bad_fps(self):
        with pytest.raises(ValueError):
            RealTime(0.0)
