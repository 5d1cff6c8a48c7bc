"""Command-line interface.

The CLI drives the same session layer as the HTTP service, against local
session directories, so headless runs and the browser UI are
interchangeable views of the same on-disk artifacts.

Commands: run, count, eval, replay, hash-config, gallery, serve.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .cache import AsFast, RealTime, config_hash, replay
from .counting import CountLedger, make_counter, method_config_from_json
from .detect import DetectorConfig
from .session import SessionManager, load_session
from .tracker import TrackerParams


def _load_json(path: str):
    with open(path) as f:
        return json.load(f)


def _split_configs(obj: dict) -> tuple[TrackerParams, DetectorConfig]:
    """Accept {"tracker": {...}, "detector": {...}} or flat tracker keys."""
    if "tracker" in obj or "detector" in obj:
        tracker = TrackerParams.from_json(obj.get("tracker", {}))
        detector = DetectorConfig.from_json(obj.get("detector", {}))
    else:
        tracker = TrackerParams.from_json(obj)
        detector = DetectorConfig()
    return tracker, detector


def _session_location(out_dir: str) -> tuple[str, str]:
    out_dir = os.path.abspath(out_dir)
    return os.path.dirname(out_dir), os.path.basename(out_dir)


def cmd_run(args) -> int:
    params, detector = (TrackerParams(), DetectorConfig())
    if args.params:
        params, detector = _split_configs(_load_json(args.params))
    root, session_id = _session_location(args.out)
    manager = SessionManager(root)
    session = manager.create_session(
        dets_path=os.path.abspath(args.dets),
        source_path=os.path.abspath(args.source) if args.source else None,
        params=params, detector=detector,
        gallery_enabled=not args.no_gallery,
        session_id=session_id,
    )
    session.start_run(wait=True)
    for event in session.events.history():
        print(f"[{event.level}] {event.message}", file=sys.stderr)
    print(json.dumps({
        "session_id": session.session_id,
        "session_dir": session.directory,
        "state": session.state.value,
        "frames": session.frames_done,
        "cache": session.cache_path,
    }))
    return 0


def cmd_count(args) -> int:
    session = load_session(os.path.abspath(args.session))
    config = method_config_from_json(_load_json(args.zone))
    ledger = session.run_count(config, quick=args.quick)
    if args.csv:
        sys.stdout.write(ledger.to_csv())
    else:
        print(ledger.to_json())
    return 0


def cmd_eval(args) -> int:
    session = load_session(os.path.abspath(args.session))
    report = session.run_eval(os.path.abspath(args.gt))
    if args.table:
        print(report.render_table())
    else:
        print(report.to_json())
    return 0


def cmd_replay(args) -> int:
    session = load_session(os.path.abspath(args.session))
    header, records = session.open_cache()
    pacing = RealTime(args.fps) if args.fps else AsFast()

    ledger = CountLedger()
    consumers = []
    if args.zone:
        counter = make_counter(method_config_from_json(_load_json(args.zone)))
        consumers.append(lambda rec: counter.update(rec.frame, rec.tracks, ledger))
    if args.verbose:
        consumers.append(
            lambda rec: print(f"frame {rec.frame}: {len(rec.tracks)} track(s)",
                              file=sys.stderr)
        )

    stats = replay(records, consumers, pacing)
    out = {
        "frames": stats.frames,
        "wall_seconds": round(stats.wall_seconds, 4),
        "effective_fps": round(stats.frames / stats.wall_seconds, 2)
        if stats.wall_seconds > 0 else None,
    }
    if args.zone:
        out["totals"] = ledger.snapshot()["totals"]
    print(json.dumps(out))
    return 0


def cmd_hash_config(args) -> int:
    params, detector = _split_configs(_load_json(args.params))
    print(config_hash(params, detector))
    return 0


def cmd_gallery(args) -> int:
    from .gallery import Gallery

    session = load_session(os.path.abspath(args.session))
    print(json.dumps({"templates": Gallery(session.gallery_dir).snapshot()}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    bind = args.bind or os.environ.get("AIV_BIND", "127.0.0.1:7070")
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        print(f"invalid bind address {bind!r} (expected host:port)", file=sys.stderr)
        return 2
    uvicorn.run(create_app(), host=host, port=int(port), log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aivision",
        description="Vehicle tracking, counting, caching, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the pipeline and write a session directory")
    p.add_argument("--dets", required=True, help="detection stream (.dets.jsonl)")
    p.add_argument("--source", help="optional image directory for pixel frames")
    p.add_argument("--params", help="JSON file with tracker/detector settings")
    p.add_argument("--out", required=True, help="session directory to create")
    p.add_argument("--no-gallery", action="store_true", help="skip template capture")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("count", help="count vehicles in an existing session")
    p.add_argument("--session", required=True, help="session directory")
    p.add_argument("--zone", required=True, help="zone/vector config JSON file")
    p.add_argument("--quick", action="store_true", help="count from cache only")
    p.add_argument("--csv", action="store_true", help="emit the event list as CSV")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("eval", help="evaluate a session against ground truth")
    p.add_argument("--session", required=True, help="session directory")
    p.add_argument("--gt", required=True, help="ground-truth stream (.gt.jsonl)")
    p.add_argument("--table", action="store_true", help="print an aligned table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="replay a session cache")
    p.add_argument("--session", required=True, help="session directory")
    p.add_argument("--fps", type=float, help="pace at this rate (default: as fast as possible)")
    p.add_argument("--zone", help="count during replay with this config file")
    p.add_argument("--verbose", action="store_true", help="log each frame")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("hash-config", help="print the cache config hash for settings")
    p.add_argument("--params", required=True, help="JSON settings file")
    p.set_defaults(func=cmd_hash_config)

    p = sub.add_parser("gallery", help="print a session's template index")
    p.add_argument("--session", required=True, help="session directory")
    p.set_defaults(func=cmd_gallery)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--bind", help="host:port (default AIV_BIND or 127.0.0.1:7070)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
