"""Evaluation math against hand-computed and published reference values."""

import itertools
import json
import random

import pytest

from aivision.detect import GTRecord, VehicleClass
from aivision.geom import BBox
from aivision.metrics import (
    FrameMatching,
    count_ids,
    counting_accuracy,
    evaluate,
    fpr_fnr,
    fps_stats,
    match_frame,
    mota,
    motp,
    prf1,
    round_display,
)
from aivision.tracker import Tracker, TrackerParams, TrackSnapshot

from tests.conftest import PLANT_EXPECTED, PLANT_FRAMES, PLANT_PARAMS_JSON, planted_dets, planted_gt


def gt(gid, x, y, w=10.0, h=10.0, cls=VehicleClass.CAR, frame=0):
    return GTRecord(frame=frame, gt_id=gid, cls=cls, box=BBox(x, y, w, h))


def pred(tid, x, y, w=10.0, h=10.0, cls=VehicleClass.CAR, score=0.9):
    return TrackSnapshot(track_id=tid, cls=cls, box=BBox(x, y, w, h), score=score)


class TestMatchFrame:
    def test_identical_boxes_all_matched(self):
        gts = [gt(1, 0, 0), gt(2, 50, 50)]
        preds = [pred(11, 0, 0), pred(12, 50, 50)]
        fm = match_frame(gts, preds, frame=0)
        assert sorted(fm.matches) == [(1, 11, 1.0), (2, 12, 1.0)]
        assert fm.unmatched_gt == () and fm.unmatched_pred == ()

    def test_disjoint_boxes_nothing_matched(self):
        fm = match_frame([gt(1, 0, 0)], [pred(9, 200, 200)], frame=0)
        assert fm.matches == ()
        assert fm.unmatched_gt == (1,)
        assert fm.unmatched_pred == (9,)

    def test_crossing_pairs_match_brute_force(self):
        gts = [gt(1, 0, 0), gt(2, 4, 0)]
        preds = [pred(11, 1, 0), pred(12, 3, 0)]
        fm = match_frame(gts, preds, frame=0)

        from aivision.geom import iou
        best = None
        for perm in itertools.permutations(range(2)):
            pairs = [(g, perm[g]) for g in range(2)]
            total = sum(iou(gts[g].box, preds[p].box) for g, p in pairs)
            if best is None or total > best[0]:
                best = (total, pairs)
        expected = {(gts[g].gt_id, preds[p].track_id) for g, p in best[1]}
        assert {(g, p) for g, p, _ in fm.matches} == expected

    def test_class_aware(self):
        fm = match_frame([gt(1, 0, 0, cls=VehicleClass.CAR)],
                         [pred(9, 0, 0, cls=VehicleClass.BUS)], frame=0)
        assert fm.matches == ()

    def test_gate_boundary_inclusive(self):
        # 6x4 boxes offset by 2 px: intersection 16, union 32, iou exactly 0.5
        fm = match_frame([gt(1, 0, 0, w=6, h=4)], [pred(9, 2, 0, w=6, h=4)], frame=0)
        assert len(fm.matches) == 1
        assert fm.matches[0][2] == 0.5

    def test_below_gate_unmatched(self):
        fm = match_frame([gt(1, 0, 0, w=6, h=4)], [pred(9, 2.5, 0, w=6, h=4)], frame=0)
        assert fm.matches == ()

    def test_empty_sides(self):
        fm = match_frame([], [pred(7, 0, 0)], frame=3)
        assert fm.unmatched_pred == (7,)
        fm = match_frame([gt(4, 0, 0, frame=3)], [], frame=3)
        assert fm.unmatched_gt == (4,)

    def test_wrong_frame_rejected(self):
        with pytest.raises(ValueError, match="frame"):
            match_frame([gt(1, 0, 0, frame=2)], [], frame=3)


class TestMota:
    def test_published_values(self):
        assert mota(0, 3, 1, 64) == pytest.approx(0.9375)
        assert mota(0, 2, 0, 63) == pytest.approx(1 - 2 / 63)
        assert round_display(mota(0, 2, 0, 63), 3) == "0.968"

    def test_perfect(self):
        assert mota(0, 0, 0, 100) == 1.0

    def test_zero_denominator_undefined(self):
        assert mota(1, 1, 0, 0) is None

    def test_can_go_negative_but_never_above_one(self):
        assert mota(10, 10, 5, 5) == pytest.approx(-4.0)
        for fn, fp, ids in [(0, 0, 0), (3, 1, 2), (50, 0, 0)]:
            value = mota(fn, fp, ids, 60)
            assert value <= 1.0


class TestMotp:
    def test_published_values(self):
        assert motp(61.0, 64) == pytest.approx(0.953125)
        assert round_display(motp(61.0, 64), 3) == "0.953"
        assert round_display(motp(61.0, 63), 3) == "0.968"

    def test_perfect_overlap(self):
        assert motp(10.0, 10) == 1.0

    def test_no_matches_undefined(self):
        assert motp(0.0, 0) is None


class TestCountIds:
    def fm(self, frame, *pairs):
        return FrameMatching(frame=frame,
                             matches=tuple((g, p, 1.0) for g, p in pairs),
                             unmatched_gt=(), unmatched_pred=())

    def test_stable_identity(self):
        ms = [self.fm(f, (1, 7)) for f in range(5)]
        assert count_ids(ms) == 0

    def test_single_switch(self):
        ms = [self.fm(0, (1, 7)), self.fm(1, (1, 7)), self.fm(2, (1, 9)), self.fm(3, (1, 9))]
        assert count_ids(ms) == 1

    def test_swap_counts_twice(self):
        ms = [self.fm(0, (1, 7), (2, 8)), self.fm(1, (1, 7), (2, 8)),
              self.fm(2, (1, 8), (2, 7)), self.fm(3, (1, 8), (2, 7))]
        assert count_ids(ms) == 2

    def test_gap_with_same_id_is_not_a_switch(self):
        ms = [self.fm(0, (1, 7)), self.fm(1), self.fm(2, (1, 7))]
        assert count_ids(ms) == 0

    def test_gap_with_new_id_is_a_switch(self):
        ms = [self.fm(0, (1, 7)), self.fm(1), self.fm(2, (1, 9))]
        assert count_ids(ms) == 1

    def test_requires_frame_order(self):
        with pytest.raises(ValueError, match="frame-ordered"):
            count_ids([self.fm(3, (1, 7)), self.fm(2, (1, 7))])


class TestPrf1:
    def test_published_video2_cars(self):
        p, r, f1 = prf1(46, 0, 2)
        assert p == 1.0
        assert r == pytest.approx(46 / 48)
        assert f1 == pytest.approx(2 * (46 / 48) / (1 + 46 / 48))
        assert (round_display(p, 2), round_display(r, 2), round_display(f1, 2)) == \
            ("1.00", "0.96", "0.98")

    def test_published_video1_cars(self):
        p, r, f1 = prf1(61, 2, 0)
        assert p == pytest.approx(61 / 63)
        assert r == 1.0
        assert round_display(f1, 2) == "0.98"

    def test_all_zero_undefined(self):
        assert prf1(0, 0, 0) == (None, None, None)

    def test_zero_tp_with_errors(self):
        p, r, f1 = prf1(0, 3, 4)
        assert p == 0.0 and r == 0.0 and f1 is None

    @pytest.mark.parametrize("tp,fp,fn", [(46, 0, 2), (61, 2, 0), (7, 3, 5)])
    @pytest.mark.parametrize("k", [2, 5])
    def test_scale_invariance(self, tp, fp, fn, k):
        base = prf1(tp, fp, fn)
        scaled = prf1(k * tp, k * fp, k * fn)
        for a, b in zip(base, scaled):
            assert a == pytest.approx(b)


class TestFprFnr:
    def test_published_values(self):
        fpr, _ = fpr_fnr(2, 0, 63, 61)
        assert fpr == pytest.approx(2 / 63)
        assert round_display(fpr, 3) == "0.032"
        _, fnr = fpr_fnr(0, 2, 10, 13)
        assert fnr == pytest.approx(2 / 13)
        _, fnr = fpr_fnr(0, 3, 10, 7)
        assert fnr == pytest.approx(3 / 7)

    def test_zero_over_zero_is_zero(self):
        assert fpr_fnr(0, 0, 0, 0) == (0.0, 0.0)


class TestCountingAccuracy:
    @pytest.mark.parametrize("detected,expected_gt,display", [
        (63, 61, "103.28"),
        (46, 48, "95.83"),
        (14, 21, "66.67"),
    ])
    def test_published_values(self, detected, expected_gt, display):
        value = counting_accuracy(detected, expected_gt)
        assert value == pytest.approx(100.0 * detected / expected_gt)
        assert round_display(value, 2) == display

    def test_overcount_exceeds_hundred(self):
        assert counting_accuracy(63, 61) > 100.0

    def test_zero_gt_undefined(self):
        assert counting_accuracy(5, 0) is None


class TestFpsStats:
    def test_constant_durations(self):
        stats = fps_stats([[0.025] * 8])
        assert stats.avg_min_fps == pytest.approx(40.0)
        assert stats.avg_fps == pytest.approx(40.0)
        assert stats.avg_max_fps == pytest.approx(40.0)
        assert stats.fps_range == pytest.approx(0.0)

    def test_two_runs_averaged(self):
        runs = [[1 / 20, 1 / 40], [1 / 30, 1 / 50]]
        stats = fps_stats(runs)
        assert stats.avg_min_fps == pytest.approx(25.0)
        assert stats.avg_max_fps == pytest.approx(45.0)
        assert stats.avg_fps == pytest.approx(35.0)
        assert stats.fps_range == pytest.approx(20.0)

    def test_single_frame_run(self):
        stats = fps_stats([[0.05]])
        assert stats.avg_min_fps == stats.avg_fps == stats.avg_max_fps

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fps_stats([])
        with pytest.raises(ValueError):
            fps_stats([[0.05], []])

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            fps_stats([[0.05, 0.0]])


class TestRoundDisplay:
    def test_half_up(self):
        assert round_display(0.0315, 3) == "0.032"
        assert round_display(2.5, 0) == "3"
        assert round_display(0.125, 2) == "0.13"

    def test_none_renders_blank(self):
        assert round_display(None, 3) == ""


def perfect_scene(frames=4):
    """GT and predictions identical: two cars and a bus per frame."""
    gts, preds = [], {}
    for f in range(frames):
        boxes = [(1, 10.0 + 3 * f, 10.0, VehicleClass.CAR),
                 (2, 100.0, 10.0 + 3 * f, VehicleClass.CAR),
                 (3, 200.0, 200.0, VehicleClass.BUS)]
        gts.extend(gt(gid, x, y, cls=cls, frame=f) for gid, x, y, cls in boxes)
        preds[f] = [pred(gid + 10, x, y, cls=cls) for gid, x, y, cls in boxes]
    return gts, preds, frames


class TestEvaluate:
    def test_identity_scene_is_perfect(self):
        gts, preds, frames = perfect_scene()
        report = evaluate(gts, preds, frames,
                          counted_per_class={VehicleClass.CAR: 2, VehicleClass.BUS: 1},
                          gt_count_per_class={VehicleClass.CAR: 2, VehicleClass.BUS: 1})
        o = report.overall
        assert (o.tp, o.fp, o.fn, o.ids) == (12, 0, 0, 0)
        assert o.mota == 1.0 and o.mota_match_denom == 1.0
        assert o.motp == pytest.approx(1.0)
        assert o.precision == o.recall == o.f1 == 1.0
        assert o.counting_accuracy_pct == pytest.approx(100.0)
        assert set(report.per_class) == {VehicleClass.CAR, VehicleClass.BUS}

    def test_per_class_sums_to_overall(self):
        gts, preds, frames = perfect_scene()
        # add one spurious pred and drop one gt's pred to create fp and fn
        preds[1] = preds[1] + [pred(99, 400.0, 400.0, cls=VehicleClass.TRUCK)]
        preds[2] = preds[2][1:]
        report = evaluate(gts, preds, frames)
        for field in ("tp", "fp", "fn", "gt_total", "pred_total"):
            total = sum(getattr(m, field) for m in report.per_class.values())
            assert total == getattr(report.overall, field), field

    def test_json_shape(self):
        gts, preds, frames = perfect_scene()
        report = evaluate(gts, preds, frames)
        obj = json.loads(report.to_json())
        assert obj["frames"] == frames
        assert obj["iou_min"] == 0.5
        assert obj["overall"]["tp"] == 12
        assert set(obj["per_class"]) == {"Car", "Bus"}
        assert obj["per_class"]["Bus"]["counting_accuracy_pct"] is None

    def test_table_renders_all_rows(self):
        gts, preds, frames = perfect_scene()
        text = evaluate(gts, preds, frames).render_table()
        lines = text.splitlines()
        assert lines[0].startswith("Class")
        assert any(row.startswith("Car") for row in lines)
        assert any(row.startswith("Bus") for row in lines)
        assert lines[-1].startswith("Overall")

    def test_counting_accuracy_absent_without_ledger_totals(self):
        gts, preds, frames = perfect_scene()
        report = evaluate(gts, preds, frames)
        assert report.overall.counting_accuracy_pct is None


class TestEvaluateInvariants:
    @pytest.mark.parametrize("seed", [3, 17, 2024])
    def test_count_identities(self, seed):
        rng = random.Random(seed)
        frames = 12
        gts, preds = [], {}
        n_pred = 0
        for f in range(frames):
            preds[f] = []
            for gid in range(rng.randint(0, 5)):
                cls = rng.choice(list(VehicleClass))
                x, y = rng.uniform(0, 500), rng.uniform(0, 400)
                gts.append(gt(gid + 1, x, y, w=20, h=20, cls=cls, frame=f))
                if rng.random() < 0.8:  # tracked copy, slightly jittered
                    preds[f].append(pred(gid + 1, x + rng.uniform(-2, 2),
                                         y + rng.uniform(-2, 2), w=20, h=20, cls=cls))
                    n_pred += 1
            for extra in range(rng.randint(0, 2)):  # clutter
                preds[f].append(pred(50 + extra, rng.uniform(0, 500),
                                     rng.uniform(0, 400), w=20, h=20,
                                     cls=rng.choice(list(VehicleClass))))
                n_pred += 1
        report = evaluate(gts, preds, frames)
        o = report.overall
        assert o.tp + o.fn == len(gts)
        assert o.tp + o.fp == n_pred
        assert o.mota is None or o.mota <= 1.0
        if o.total_matches:
            assert 0.5 <= o.motp <= 1.0
        for m in report.per_class.values():
            assert m.tp + m.fn == m.gt_total
            assert m.tp + m.fp == m.pred_total


class TestPlantedScene:
    """The seeded-defect fixture: two spurious boxes and one identity jump
    have exactly known consequences."""

    def run(self):
        params = TrackerParams.from_json(PLANT_PARAMS_JSON["tracker"])
        tracker = Tracker(params)
        by_frame = {}
        for d in planted_dets():
            by_frame.setdefault(d.frame, []).append(d)
        preds = {}
        for f in range(PLANT_FRAMES):
            dets = by_frame.get(f, [])
            high = [d for d in dets if d.score >= params.score_high]
            low = [d for d in dets if params.score_low <= d.score < params.score_high]
            preds[f] = tracker.step(f, high, low)
        return evaluate(planted_gt(), preds, PLANT_FRAMES)

    def test_seeded_defect_counts(self):
        report = self.run()
        o = report.overall
        assert o.tp == PLANT_EXPECTED["tp"]
        assert o.fp == PLANT_EXPECTED["fp"]
        assert o.fn == PLANT_EXPECTED["fn"]
        assert o.ids == PLANT_EXPECTED["ids"]
        assert o.mota == pytest.approx(1 - 3 / 120)
        assert o.motp == pytest.approx(1.0, abs=1e-6)

    def test_defects_land_in_the_right_classes(self):
        report = self.run()
        car = report.per_class[VehicleClass.CAR]
        truck = report.per_class[VehicleClass.TRUCK]
        assert (car.fp, car.ids) == (2, 0)       # spurious boxes are cars
        assert (truck.fp, truck.ids) == (0, 1)   # the jump breaks the truck id
        assert car.mota == pytest.approx(1 - 2 / 60)
        assert truck.mota == pytest.approx(1 - 1 / 60)
