import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_ap
from weatherbias.data import Annotation, BBox, ClassSet, DatasetManifest, Detection, Record
from weatherbias.errors import ContractError, EvaluationError, ParseError
from weatherbias.evaluation import (EvalReport, PRPoint, assign_tp_fp, average_precision, evaluate,
                                    evaluate_detections, mean_ap, pr_curve, read_detection_dump,
                                    render_report_table, write_detection_dump)

B = BBox(0, 0, 10, 10)


def det(box, conf, cls=0):
    return Detection(box if isinstance(box, BBox) else BBox(*box), cls, conf)


def gt(box, cls=0, difficult=False):
    return Annotation(box if isinstance(box, BBox) else BBox(*box), cls, difficult)


def ap_of(labels, n_gt, method="11point"):
    confs = [1.0 - 0.01 * i for i in range(len(labels))]
    return average_precision(pr_curve(labels, confs, n_gt), n_gt, method)


# --------------------------------------------------------------------------
# TP/FP assignment
# --------------------------------------------------------------------------

def test_exact_detection_is_tp():
    assert [lab for _, lab in assign_tp_fp([det(B, 0.9)], [gt(B)], 0)] == ["tp"]


def test_double_detection_second_is_fp():
    out = assign_tp_fp([det(B, 0.7), det(B, 0.9)], [gt(B)], 0)
    assert [(d.confidence, lab) for d, lab in out] == [(0.9, "tp"), (0.7, "fp")]


def test_low_overlap_is_fp():
    # 10x10 gt, 10x4 det inside it: IoU 0.4
    assert [lab for _, lab in assign_tp_fp([det((0, 0, 10, 4), 0.9)], [gt(B)], 0)] == ["fp"]


def test_detection_on_difficult_gt_is_ignored():
    out = assign_tp_fp([det(B, 0.9)], [gt(B, difficult=True)], 0)
    assert [lab for _, lab in out] == ["ignore"]


def test_other_class_ignored_by_assignment():
    assert assign_tp_fp([det(B, 0.9, cls=1)], [gt(B)], 0) == []


def test_highest_iou_gt_wins():
    gts = [gt((0, 0, 10, 10)), gt((1, 0, 11, 10))]
    out = assign_tp_fp([det((1, 0, 11, 10), 0.9), det((0, 0, 10, 10), 0.8)], gts, 0)
    assert [lab for _, lab in out] == ["tp", "tp"]


# --------------------------------------------------------------------------
# Average precision
# --------------------------------------------------------------------------

def test_all_found_no_fp_is_one():
    for method in ("11point", "allpoint"):
        assert ap_of([True, True, True], 3, method) == 1.0


def test_no_detections_is_zero():
    assert average_precision([], 4) == 0.0


def test_no_ground_truth_is_zero():
    assert ap_of([False, False], 0) == 0.0


def test_fp_then_tp_with_two_gts_is_three_elevenths():
    points = pr_curve([False, True], [0.9, 0.8], 2)
    assert points[-1] == PRPoint(0.8, 1, 1, 0.5, 0.5)
    assert average_precision(points, 2, "11point") == pytest.approx(3 / 11, abs=1e-12)
    assert float(brute_force_ap([([((0, 0, 9, 9), 0, 0.9), ((20, 20, 30, 30), 0, 0.8)],
                                  [((20, 20, 30, 30), 0, False), ((40, 40, 50, 50), 0, False)])], 0)) \
        == pytest.approx(3 / 11, abs=1e-15)


def test_all_point_area():
    # TP, FP, TP with three gts: recall steps 1/3 at precision 1 and 1/3 at 2/3
    assert ap_of([True, False, True], 3, "allpoint") == pytest.approx(1 / 3 + 2 / 9, abs=1e-12)


def test_unknown_method():
    with pytest.raises(ValueError):
        average_precision([], 1, "coco")


@given(st.lists(st.booleans(), max_size=12), st.integers(0, 3), st.integers(0, 12))
def test_adding_tp_never_decreases_ap(labels, extra_gt, pos):
    n_gt = sum(labels) + 1 + extra_gt
    pos = min(pos, len(labels))
    more = labels[:pos] + [True] + labels[pos:]
    for method in ("11point", "allpoint"):
        assert ap_of(more, n_gt, method) >= ap_of(labels, n_gt, method) - 1e-12


@given(st.lists(st.booleans(), max_size=12), st.integers(1, 4))
def test_trailing_fp_never_increases_11point(labels, extra_gt):
    n_gt = sum(labels) + extra_gt
    assert ap_of(labels + [False], n_gt) <= ap_of(labels, n_gt) + 1e-12


@given(st.lists(st.booleans(), max_size=15), st.integers(0, 3))
def test_ap_bounded_and_all_point_dominates_recall_times_precision(labels, extra_gt):
    n_gt = sum(labels) + extra_gt
    for method in ("11point", "allpoint"):
        assert 0.0 <= ap_of(labels, n_gt, method) <= 1.0
    if n_gt and labels:
        # the envelope covers the rectangle up to the final operating point
        tp = sum(labels)
        assert ap_of(labels, n_gt, "allpoint") >= (tp / n_gt) * (tp / len(labels)) - 1e-12


# --------------------------------------------------------------------------
# mean_ap
# --------------------------------------------------------------------------

@pytest.mark.parametrize("aps,want", [([7, 0, 8, 0], 3.75), ([6, 26, 29, 0], 15.25), ([6, 3, 4, 92], 26.25)])
def test_mean_ap_table_rows(aps, want):
    assert mean_ap(aps) == pytest.approx(want, abs=1e-12)


def test_mean_ap_decimal_row():
    assert mean_ap([18.80, 47.1, 32.5, 15.10]) == pytest.approx(28.375, abs=1e-12)
    assert abs(mean_ap([18.80, 47.1, 32.5, 15.10]) - 28.37) <= 0.01


def test_mean_ap_length_contract():
    with pytest.raises(ContractError):
        mean_ap([1.0, 2.0], expected=4)
    with pytest.raises(ContractError):
        mean_ap([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.floats(0, 1))
def test_mean_ap_linear(aps, k):
    assert mean_ap([k * a for a in aps]) == pytest.approx(k * mean_ap(aps), abs=1e-12)


# --------------------------------------------------------------------------
# Oracle equivalence on random micro-sets
# --------------------------------------------------------------------------

CONFS = (0.95, 0.9, 0.8, 0.8, 0.6, 0.5, 0.3)


def random_micro_set(seed, n_classes=2):
    """At most 5 images and 10 boxes, integer coordinates, tied confidences."""
    r = random.Random(seed)
    images = []
    budget = 10
    for _ in range(r.randint(1, 5)):
        gts, dets = [], []
        for _ in range(r.randint(0, min(3, budget))):
            x, y = r.randint(0, 25), r.randint(0, 25)
            box = (x, y, x + r.randint(2, 14), y + r.randint(2, 14))
            gts.append((box, r.randrange(n_classes), r.random() < 0.15))
            budget -= 1
        for _ in range(r.randint(0, min(4, budget))):
            if gts and r.random() < 0.7:
                (x0, y0, x1, y1), cls, _ = r.choice(gts)
                dx, dy = r.randint(-3, 3), r.randint(-3, 3)
                box = (max(0, x0 + dx), max(0, y0 + dy), max(0, x0 + dx) + x1 - x0, max(0, y0 + dy) + y1 - y0)
            else:
                x, y = r.randint(0, 25), r.randint(0, 25)
                box, cls = (x, y, x + r.randint(2, 14), y + r.randint(2, 14)), r.randrange(n_classes)
            dets.append((box, cls, r.choice(CONFS)))
            budget -= 1
        images.append((dets, gts))
    return images


def to_package(images, n_classes=2):
    names = ("car", "bus", "person", "bicycle")[:n_classes]
    records = [Record(f"im{i}.ppm", (48, 48), [gt(b, c, d) for b, c, d in gts]) for i, (_, gts) in enumerate(images)]
    dets = [[det(b, conf, c) for b, c, conf in ds] for ds, _ in images]
    return dets, DatasetManifest(records, ClassSet(names))


def check_micro_set(seed):
    images = random_micro_set(seed)
    dets, manifest = to_package(images)
    for method in ("11point", "allpoint"):
        report = evaluate_detections(dets, manifest, 0.5, method)
        for c in range(2):
            want = brute_force_ap(images, c, Fraction(1, 2), method)
            assert abs(report.ap[c] - float(want)) <= 1e-9, (seed, method, c)


@pytest.mark.parametrize("block", range(4))
def test_matches_brute_force_on_micro_sets(block):
    for seed in range(block * 50, block * 50 + 50):
        check_micro_set(seed)


@given(st.integers(0, 2**31))
def test_evaluation_invariant_to_detection_order(seed):
    images = random_micro_set(seed)
    dets, manifest = to_package(images)
    r = random.Random(seed)
    shuffled = [r.sample(ds, len(ds)) for ds in dets]
    # ties in confidence are broken by input order, so only permute within distinct confidences
    key = lambda ds: sorted(ds, key=lambda d: -d.confidence)
    a = evaluate_detections([key(ds) for ds in dets], manifest)
    b = evaluate_detections([key(ds) for ds in shuffled], manifest)
    if all(len({d.confidence for d in ds}) == len(ds) for ds in dets):
        assert a == b
    assert evaluate_detections(dets, manifest).map == pytest.approx(
        float(sum(brute_force_ap(images, c) for c in range(2)) / 2), abs=1e-12)


# --------------------------------------------------------------------------
# evaluate / reports
# --------------------------------------------------------------------------

def _perfect_manifest():
    records = [Record("a.ppm", (64, 64), [gt((1, 1, 20, 20), 0), gt((30, 30, 50, 60), 1)]),
               Record("b.ppm", (64, 64), [gt((5, 5, 15, 25), 2), gt((40, 2, 60, 12), 3)])]
    return DatasetManifest(records)


def test_perfect_detector_scores_one():
    m = _perfect_manifest()
    dump = {r.image_path: [det(a.bbox, 1.0, a.class_id) for a in r.annotations] for r in m.records}
    report = evaluate(dump, m)
    assert report.ap == (1.0, 1.0, 1.0, 1.0) and report.map == 1.0
    assert report.n_gt == (1, 1, 1, 1) and report.n_images == 2


def test_empty_test_set_is_error():
    with pytest.raises(EvaluationError):
        evaluate({}, DatasetManifest(()))


def test_class_without_ground_truth_warns_and_scores_zero():
    m = DatasetManifest([Record("a.ppm", (64, 64), [gt((1, 1, 20, 20), 0)])])
    report = evaluate({"a.ppm": [det((1, 1, 20, 20), 0.9, 0)]}, m)
    assert report.ap == (1.0, 0.0, 0.0, 0.0) and report.map == 0.25
    assert len(report.warnings) == 3 and "'bus'" in report.warnings[0]


def test_model_class_set_mismatch():
    from weatherbias.detector import Architecture, init_model
    model = init_model(Architecture(num_classes=2), ClassSet(("car", "bus")))
    with pytest.raises(EvaluationError):
        evaluate(model, _perfect_manifest())


def test_detection_dump_round_trip(tmp_path):
    dump = {"a.ppm": [det((1.5, 2, 3.25, 4), 0.125, 1), det((0, 0, 64, 64), 1.0, 3)], "b.ppm": [det(B, 0.3)]}
    write_detection_dump(dump, tmp_path / "d.tsv")
    assert read_detection_dump(tmp_path / "d.tsv") == dump


def test_detection_dump_malformed(tmp_path):
    (tmp_path / "d.tsv").write_text("a.ppm\t0\t0.5\n")
    with pytest.raises(ParseError) as info:
        read_detection_dump(tmp_path / "d.tsv")
    assert info.value.record == 1


def _report(label, aps):
    return EvalReport(label, ("car", "bus", "person", "bicycle"), tuple(a / 100 for a in aps),
                      mean_ap([a / 100 for a in aps]), 10, (1, 1, 1, 1), (0, 0, 0, 0))


def test_table_zero_reports_is_header_only():
    md = render_report_table([], "markdown")
    assert md.count("\n") == 2 and "Class 3 AP [bicycle]" in md
    assert render_report_table([], "csv") == "Model,Class 0 AP [car],Class 1 AP [bus],Class 2 AP [person]," \
                                             "Class 3 AP [bicycle],mAP\n"


def test_table_one_row():
    csv_text = render_report_table([_report("Stage2", [7, 0, 8, 0])], "csv")
    assert csv_text.splitlines()[1] == "Stage2,7.00,0.00,8.00,0.00,3.75"
    md = render_report_table([_report("Stage2", [7, 0, 8, 0])])
    assert md.splitlines()[2] == "| Stage2 | 7.00 | 0.00 | 8.00 | 0.00 | 3.75 |"


def test_table_deterministic_and_rejects_mixed_class_sets():
    reps = [_report("a", [1, 2, 3, 4]), _report("b", [5, 6, 7, 8])]
    assert render_report_table(reps, "csv") == render_report_table(reps, "csv")
    odd = EvalReport("c", ("car",), (0.5,), 0.5, 1, (1,), (1,))
    with pytest.raises(ContractError):
        render_report_table(reps + [odd])


def test_report_json_round_trip():
    rep = _report("x", [10, 20, 30, 40])
    import json
    assert EvalReport.from_dict(json.loads(rep.to_json())) == rep
    assert rep.map_percent == pytest.approx(25.0)
