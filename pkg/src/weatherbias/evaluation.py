"""VOC-style detection evaluation: TP/FP assignment, PR curves, AP and mAP,
plus Markdown/CSV report tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._backend import kernels
from .data import DEFAULT_CLASSES, Annotation, BBox, DatasetManifest, Detection, boxes_to_array
from .errors import ContractError, EvaluationError, ParseError

log = logging.getLogger(__name__)

TP, FP, IGNORE = "tp", "fp", "ignore"
METHODS = ("11point", "allpoint")


@dataclass(frozen=True)
class PRPoint:
    confidence: float
    tp: int
    fp: int
    precision: float
    recall: float


def _sorted_by_confidence(dets):
    return sorted(dets, key=lambda d: -d.confidence)  # stable


def assign_tp_fp(dets: Sequence[Detection], gts: Sequence[Annotation], class_id: int,
                 iou_thresh: float = 0.5):
    """Greedy matching of one image's detections of ``class_id``.

    Each detection, in descending confidence, takes the unmatched
    non-difficult ground truth of highest IoU if that IoU reaches the
    threshold. Detections that only hit a difficult ground truth are
    ignored rather than counted as false positives.
    Returns ``[(detection, label)]`` in processing order.
    """
    dets = _sorted_by_confidence([d for d in dets if d.class_id == class_id])
    gts = [g for g in gts if g.class_id == class_id]
    if not dets:
        return []
    gt_boxes = boxes_to_array(g.bbox for g in gts)
    difficult = np.array([g.difficult for g in gts], dtype=bool)
    ious = kernels.iou_matrix(boxes_to_array(d.bbox for d in dets), gt_boxes) if gts else None
    used = np.zeros(len(gts), dtype=bool)
    out = []
    for i, det in enumerate(dets):
        label = FP
        if gts:
            row = np.where(used | difficult, -1.0, ious[i])
            j = int(np.argmax(row))
            if row[j] >= iou_thresh:
                used[j] = True
                label = TP
            elif difficult.any() and ious[i][difficult].max() >= iou_thresh:
                label = IGNORE
        out.append((det, label))
    return out


def pr_curve(labels: Sequence[bool], confidences: Sequence[float], n_gt: int) -> list[PRPoint]:
    """Cumulative PR points for TP flags already sorted by descending confidence."""
    points, tp, fp = [], 0, 0
    for is_tp, conf in zip(labels, confidences):
        tp += bool(is_tp)
        fp += not is_tp
        recall = tp / n_gt if n_gt else 0.0
        points.append(PRPoint(float(conf), tp, fp, tp / (tp + fp), recall))
    return points


def average_precision(points: Sequence[PRPoint], n_gt: int, method: str = "11point") -> float:
    """AP of a PR curve. ``n_gt == 0`` yields 0 (callers flag it)."""
    if method not in METHODS:
        raise ValueError(f"unknown AP method {method!r}")
    if n_gt <= 0 or not points:
        return 0.0
    prec = np.array([p.precision for p in points])
    rec = np.array([p.tp / n_gt for p in points])
    if method == "11point":
        total = 0.0
        for k in range(11):
            above = prec[rec >= k / 10]
            total += above.max() if above.size else 0.0
        return total / 11.0
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(per_class: Sequence[float], expected: int | None = None) -> float:
    """Arithmetic mean including zero entries."""
    if expected is not None and len(per_class) != expected:
        raise ContractError(f"expected {expected} per-class APs, got {len(per_class)}")
    if not per_class:
        raise ContractError("mean_ap of an empty list")
    return math.fsum(per_class) / len(per_class)


@dataclass(frozen=True)
class EvalReport:
    label: str
    class_names: tuple[str, ...]
    ap: tuple[float, ...]  # fractions in [0, 1]
    map: float
    n_images: int
    n_gt: tuple[int, ...]
    n_det: tuple[int, ...]
    model_id: str = ""
    dataset_id: str = ""
    iou_thresh: float = 0.5
    method: str = "11point"
    warnings: tuple[str, ...] = ()

    @property
    def ap_percent(self) -> tuple[float, ...]:
        return tuple(100.0 * a for a in self.ap)

    @property
    def map_percent(self) -> float:
        return 100.0 * self.map

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        d = dict(d)
        for key in ("class_names", "ap", "n_gt", "n_det", "warnings"):
            d[key] = tuple(d[key])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate_detections(detections: Sequence[Sequence[Detection]], test: DatasetManifest,
                        iou_thresh: float = 0.5, method: str = "11point", label: str = "",
                        model_id: str = "", dataset_id: str = "") -> EvalReport:
    """Score per-image detection lists (aligned with ``test.records``)."""
    if not test.records:
        raise EvaluationError("cannot evaluate on an empty test set")
    if len(detections) != len(test.records):
        raise ContractError("need one detection list per test image")
    n_classes = len(test.class_set)
    aps, n_gt, n_det, warnings = [], [], [], []
    for c in range(n_classes):
        scored = []  # (confidence, image, rank, is_tp)
        gts = 0
        for i, (rec, dets) in enumerate(zip(test.records, detections)):
            gts += sum(1 for a in rec.annotations if a.class_id == c and not a.difficult)
            for rank, (det, lab) in enumerate(assign_tp_fp(dets, rec.annotations, c, iou_thresh)):
                if lab != IGNORE:
                    scored.append((det.confidence, i, rank, lab == TP))
        scored.sort(key=lambda s: (-s[0], s[1], s[2]))
        points = pr_curve([s[3] for s in scored], [s[0] for s in scored], gts)
        if gts == 0:
            msg = f"class {test.class_set.names[c]!r} has no ground truth; AP set to 0"
            log.warning(msg)
            warnings.append(msg)
        aps.append(average_precision(points, gts, method))
        n_gt.append(gts)
        n_det.append(len(scored))
    return EvalReport(label, test.class_set.names, tuple(float(a) for a in aps), mean_ap(aps, n_classes),
                      len(test.records), tuple(n_gt), tuple(n_det), model_id, dataset_id,
                      iou_thresh, method, tuple(warnings))


def evaluate(source, test: DatasetManifest, iou_thresh: float = 0.5, method: str = "11point",
             conf_threshold: float = 0.05, nms_iou: float = 0.45, label: str = "",
             model_id: str = "", dataset_id: str = "", images=None) -> EvalReport:
    """Evaluate a model (``ModelState``) or a detection dump
    (``{image_path: [Detection]}``) on ``test``."""
    from .detector.inference import predict_batch
    from .detector.network import ModelState
    from .detector.training import load_images

    if not test.records:
        raise EvaluationError("cannot evaluate on an empty test set")
    if isinstance(source, ModelState):
        if source.class_set != test.class_set:
            raise EvaluationError("model and test set use different class sets")
        if images is None:
            images = load_images(test)
        detections = predict_batch(source, images, conf_threshold, nms_iou)
    else:
        detections = [list(source.get(rec.image_path, ())) for rec in test.records]
    return evaluate_detections(detections, test, iou_thresh, method, label, model_id, dataset_id)


# --------------------------------------------------------------------------
# Detection dumps and report tables
# --------------------------------------------------------------------------

def write_detection_dump(dump: Mapping[str, Sequence[Detection]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for image_path, dets in dump.items():
            for d in dets:
                b = d.bbox
                fh.write(f"{image_path}\t{d.class_id}\t{d.confidence!r}\t"
                         f"{b.xmin!r},{b.ymin!r},{b.xmax!r},{b.ymax!r}\n")


def read_detection_dump(path) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                image_path, cls, conf, box = line.split("\t")
                det = Detection(BBox(*(float(v) for v in box.split(","))), int(cls), float(conf))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"detection dump line {lineno}: {exc}", record=lineno) from None
            out.setdefault(image_path, []).append(det)
    return out


def _rows(reports):
    if not reports:
        return None, []
    names = reports[0].class_names
    if any(r.class_names != names for r in reports):
        raise ContractError("reports use different class sets")
    rows = [[r.label] + [f"{a:.2f}" for a in r.ap_percent] + [f"{r.map_percent:.2f}"] for r in reports]
    return names, rows


def render_report_table(reports: Sequence[EvalReport], fmt: str = "markdown",
                        class_names: Sequence[str] | None = None) -> str:
    """Table with one row per report: label, per-class AP (percent), mAP."""
    names, rows = _rows(list(reports))
    names = tuple(names or class_names or DEFAULT_CLASSES)
    header = ["Model"] + [f"Class {i} AP [{n}]" for i, n in enumerate(names)] + ["mAP"]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown table format {fmt!r}")
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(["---"] + ["---:"] * (len(header) - 1)) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"
