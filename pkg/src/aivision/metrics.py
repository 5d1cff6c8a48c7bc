"""Evaluation: per-frame matching, MOTA/MOTP, precision/recall/F1,
FPR/FNR, counting accuracy, and FPS statistics.

Ratios that are mathematically undefined (a 0/0) are carried as None and
rendered blank, with one deliberate exception: FPR/FNR report 0 for 0/0,
matching the zero-filled convention of the tables they feed.

MOTA is computed in two denominator modes. The formula mode divides by
total ground-truth instances; the match-denominator mode divides by the
number of matches, which is the convention the published per-video accuracy
tables actually follow. Both appear in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from .assignment import solve_assignment
from .detect import GTRecord, VehicleClass
from .geom import iou
from .tracker import TrackSnapshot

MATCH_IOU_MIN = 0.5


@dataclass(frozen=True)
class FrameMatching:
    frame: int
    matches: tuple[tuple[int, int, float], ...]  # (gt_id, pred_track_id, iou)
    unmatched_gt: tuple[int, ...]
    unmatched_pred: tuple[int, ...]


def match_frame(gt: Sequence[GTRecord], preds: Sequence[TrackSnapshot],
                frame: int, iou_min: float = MATCH_IOU_MIN) -> FrameMatching:
    """Maximum-total-IoU one-to-one matching, class-aware, gated at iou_min."""
    for g in gt:
        if g.frame != frame:
            raise ValueError(f"gt record for frame {g.frame} in frame {frame} batch")
    n, m = len(gt), len(preds)
    if n == 0 or m == 0:
        return FrameMatching(frame=frame, matches=(),
                             unmatched_gt=tuple(g.gt_id for g in gt),
                             unmatched_pred=tuple(p.track_id for p in preds))
    overlap = [[iou(gt[r].box, preds[c].box) for c in range(m)] for r in range(n)]

    def gate(r, c):
        return gt[r].cls is preds[c].cls and overlap[r][c] >= iou_min

    cost = [[1.0 - overlap[r][c] for c in range(m)] for r in range(n)]
    pairs = solve_assignment(cost, gate)
    matched_r = {r for r, _ in pairs}
    matched_c = {c for _, c in pairs}
    return FrameMatching(
        frame=frame,
        matches=tuple((gt[r].gt_id, preds[c].track_id, overlap[r][c]) for r, c in pairs),
        unmatched_gt=tuple(gt[r].gt_id for r in range(n) if r not in matched_r),
        unmatched_pred=tuple(preds[c].track_id for c in range(m) if c not in matched_c),
    )


def mota(fn_total: int, fp_total: int, ids_total: int, denom: int) -> float | None:
    if denom <= 0:
        return None
    return 1.0 - (fn_total + fp_total + ids_total) / denom


def motp(sum_iou: float, total_matches: int) -> float | None:
    if total_matches <= 0:
        return None
    return sum_iou / total_matches


def count_ids(matchings: Iterable[FrameMatching]) -> int:
    """Identity switches: a gt id whose matched track id differs from its
    previously matched one. Sequential by construction."""
    last: dict[int, int] = {}
    switches = 0
    prev_frame = None
    for fm in matchings:
        if prev_frame is not None and fm.frame <= prev_frame:
            raise ValueError("matchings must be frame-ordered")
        prev_frame = fm.frame
        for gt_id, pred_id, _ in fm.matches:
            if gt_id in last and last[gt_id] != pred_id:
                switches += 1
            last[gt_id] = pred_id
    return switches


def prf1(tp: int, fp: int, fn: int) -> tuple[float | None, float | None, float | None]:
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def fpr_fnr(fp: int, fn: int, detections_total: int, gt_total: int) -> tuple[float, float]:
    fpr = fp / detections_total if detections_total > 0 else 0.0
    fnr = fn / gt_total if gt_total > 0 else 0.0
    return fpr, fnr


def counting_accuracy(detected_count: int, gt_count: int) -> float | None:
    if gt_count <= 0:
        return None
    return 100.0 * detected_count / gt_count


@dataclass(frozen=True)
class FpsStats:
    per_frame_fps: tuple[tuple[float, ...], ...]  # one series per run
    avg_min_fps: float
    avg_fps: float
    avg_max_fps: float
    fps_range: float


def fps_stats(runs: Sequence[Sequence[float]]) -> FpsStats:
    """Per-frame fps from duration series; min/mean/max per run, averaged
    across runs. Range is avg_max minus avg_min."""
    if not runs or any(len(r) == 0 for r in runs):
        raise ValueError("fps_stats needs at least one non-empty duration series")
    series = []
    for run in runs:
        if any(d <= 0 for d in run):
            raise ValueError("frame durations must be positive")
        series.append(tuple(1.0 / d for d in run))
    mins = [min(s) for s in series]
    means = [sum(s) / len(s) for s in series]
    maxs = [max(s) for s in series]
    avg_min = sum(mins) / len(mins)
    avg = sum(means) / len(means)
    avg_max = sum(maxs) / len(maxs)
    return FpsStats(per_frame_fps=tuple(series), avg_min_fps=avg_min,
                    avg_fps=avg, avg_max_fps=avg_max, fps_range=avg_max - avg_min)


@dataclass(frozen=True)
class ClassMetrics:
    gt_total: int
    pred_total: int
    tp: int
    fp: int
    fn: int
    ids: int
    total_matches: int
    sum_iou: float
    mota: float | None
    mota_match_denom: float | None
    motp: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    fpr: float
    fnr: float
    counting_accuracy_pct: float | None


@dataclass(frozen=True)
class EvalReport:
    iou_min: float
    per_class: Mapping[VehicleClass, ClassMetrics]
    overall: ClassMetrics
    frames: int

    def to_json(self) -> str:
        def enc(m: ClassMetrics) -> dict:
            return {
                "gt_total": m.gt_total, "pred_total": m.pred_total,
                "tp": m.tp, "fp": m.fp, "fn": m.fn, "ids": m.ids,
                "total_matches": m.total_matches, "sum_iou": m.sum_iou,
                "mota": m.mota, "mota_match_denom": m.mota_match_denom,
                "motp": m.motp,
                "precision": m.precision, "recall": m.recall, "f1": m.f1,
                "fpr": m.fpr, "fnr": m.fnr,
                "counting_accuracy_pct": m.counting_accuracy_pct,
            }
        return json.dumps({
            "iou_min": self.iou_min,
            "frames": self.frames,
            "overall": enc(self.overall),
            "per_class": {cls.label: enc(m) for cls, m in sorted(self.per_class.items())},
        }, separators=(",", ":"))

    def render_table(self) -> str:
        cols = ["Class", "GT", "TP", "FP", "FN", "IDS", "MOTA", "MOTP",
                "Precision", "Recall", "F1", "FPR", "FNR", "Count Acc (%)"]
        rows = []
        def fmt(m: ClassMetrics, name: str) -> list[str]:
            return [
                name, str(m.gt_total), str(m.tp), str(m.fp), str(m.fn), str(m.ids),
                round_display(m.mota, 3), round_display(m.motp, 3),
                round_display(m.precision, 2), round_display(m.recall, 2),
                round_display(m.f1, 2),
                round_display(m.fpr, 3), round_display(m.fnr, 3),
                round_display(m.counting_accuracy_pct, 2),
            ]
        for cls, m in sorted(self.per_class.items()):
            rows.append(fmt(m, cls.label))
        rows.append(fmt(self.overall, "Overall"))
        widths = [max(len(cols[i]), *(len(r[i]) for r in rows)) for i in range(len(cols))]
        def line(cells):
            return "  ".join(c.rjust(widths[i]) if i else c.ljust(widths[i])
                             for i, c in enumerate(cells))
        sep = "  ".join("-" * w for w in widths)
        return "\n".join([line(cols), sep] + [line(r) for r in rows])


def round_display(value: float | None, places: int) -> str:
    """Half-up rounding for display; internal math stays full precision."""
    if value is None:
        return ""
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def _metrics_from_counts(gt_total: int, pred_total: int, tp: int, fp: int,
                         fn: int, ids: int, matches: int, sum_iou: float,
                         counted: int | None, gt_count: int | None) -> ClassMetrics:
    precision, recall, f1 = prf1(tp, fp, fn)
    fpr, fnr = fpr_fnr(fp, fn, pred_total, gt_total)
    acc = None
    if counted is not None and gt_count is not None:
        acc = counting_accuracy(counted, gt_count)
    return ClassMetrics(
        gt_total=gt_total, pred_total=pred_total, tp=tp, fp=fp, fn=fn,
        ids=ids, total_matches=matches, sum_iou=sum_iou,
        mota=mota(fn, fp, ids, gt_total),
        mota_match_denom=mota(fn, fp, ids, matches),
        motp=motp(sum_iou, matches),
        precision=precision, recall=recall, f1=f1, fpr=fpr, fnr=fnr,
        counting_accuracy_pct=acc,
    )


def evaluate(gt: Sequence[GTRecord],
             preds_by_frame: Mapping[int, Sequence[TrackSnapshot]],
             frames: int,
             iou_min: float = MATCH_IOU_MIN,
             counted_per_class: Mapping[VehicleClass, int] | None = None,
             gt_count_per_class: Mapping[VehicleClass, int] | None = None) -> EvalReport:
    """Full evaluation over a sequence.

    Matching is run once per frame, class-aware; per-class rows are then
    carved out of the shared matching so the per-class numbers always sum
    to the overall ones. Counting accuracy appears only when per-class
    counted/gt totals are supplied (they come from a ledger, not from the
    detection-level matching).
    """
    gt_by_frame: dict[int, list[GTRecord]] = {}
    for g in gt:
        gt_by_frame.setdefault(g.frame, []).append(g)
    gt_cls: dict[int, VehicleClass] = {}
    for g in gt:
        gt_cls[g.gt_id] = g.cls

    classes = sorted({g.cls for g in gt} |
                     {p.cls for ps in preds_by_frame.values() for p in ps})

    matchings: list[FrameMatching] = []
    per_frame_class: list[dict] = []
    for f in range(frames):
        gts = gt_by_frame.get(f, [])
        ps = list(preds_by_frame.get(f, []))
        fm = match_frame(gts, ps, frame=f, iou_min=iou_min)
        matchings.append(fm)
        pred_cls = {p.track_id: p.cls for p in ps}
        per_frame_class.append({
            "matches": [(g, p, v, gt_cls[g]) for g, p, v in fm.matches],
            "unmatched_gt": [(g, gt_cls[g]) for g in fm.unmatched_gt],
            "unmatched_pred": [(p, pred_cls[p]) for p in fm.unmatched_pred],
        })

    def tally(cls: VehicleClass | None) -> ClassMetrics:
        keep = (lambda c: True) if cls is None else (lambda c: c is cls)
        tp = fp = fn = 0
        sum_iou = 0.0
        class_matchings = []
        for fm, info in zip(matchings, per_frame_class):
            kept = [(g, p, v) for g, p, v, c in info["matches"] if keep(c)]
            tp += len(kept)
            sum_iou += sum(v for _, _, v in kept)
            fn += sum(1 for _, c in info["unmatched_gt"] if keep(c))
            fp += sum(1 for _, c in info["unmatched_pred"] if keep(c))
            class_matchings.append(FrameMatching(
                frame=fm.frame, matches=tuple(kept),
                unmatched_gt=(), unmatched_pred=()))
        ids = count_ids(class_matchings)
        gt_total = tp + fn
        pred_total = tp + fp
        counted = gt_count = None
        if counted_per_class is not None and gt_count_per_class is not None:
            if cls is None:
                counted = sum(counted_per_class.values())
                gt_count = sum(gt_count_per_class.values())
            else:
                counted = counted_per_class.get(cls, 0)
                gt_count = gt_count_per_class.get(cls, 0)
        return _metrics_from_counts(gt_total, pred_total, tp, fp, fn, ids,
                                    tp, sum_iou, counted, gt_count)

    per_class = {cls: tally(cls) for cls in classes}
    return EvalReport(iou_min=iou_min, per_class=per_class,
                      overall=tally(None), frames=frames)
