"""Decoding, per-class non-maximum suppression and prediction."""

from __future__ import annotations

import numpy as np

from .._backend import kernels
from ..data import BBox, Detection
from .anchors import decode_boxes
from .loss import softmax
from .network import ModelState, forward_batch

# exp() guard for decoding untrained size offsets
_MAX_LOG_RATIO = 4.0


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy NMS. Returns kept indices in descending score order; equal
    scores keep input order."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = np.argsort(-np.asarray(scores), kind="stable")
    keep = []
    while len(order):
        i = order[0]
        keep.append(i)
        if len(order) == 1:
            break
        ov = kernels.iou_matrix(boxes[i:i + 1], boxes[order[1:]])[0]
        order = order[1:][ov <= iou_threshold]
    return np.asarray(keep, dtype=np.int64)


def _postprocess(probs, boxes, size, conf_threshold, nms_iou, top_k):
    boxes = np.clip(boxes, 0.0, float(size))
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    found = []  # (score, class, anchor)
    for c in range(1, probs.shape[1]):
        cand = np.flatnonzero(valid & (probs[:, c] >= conf_threshold))
        if not len(cand):
            continue
        kept = cand[nms(boxes[cand], probs[cand, c], nms_iou)]
        found.extend((probs[i, c], c - 1, i) for i in kept)
    found.sort(key=lambda f: -f[0])  # stable: class order, then NMS order
    return [Detection(BBox(*(float(v) for v in boxes[i])), cls, float(score))
            for score, cls, i in found[:top_k]]


def predict_batch(model: ModelState, images, conf_threshold: float = 0.05, nms_iou: float = 0.45,
                  top_k: int = 100, batch_size: int = 64):
    anchors = model.anchors()
    size = model.arch.input_size
    images = np.asarray(images, dtype=np.float64)
    results = []
    for start in range(0, len(images), batch_size):
        logits, offsets = forward_batch(model, images[start:start + batch_size])
        probs = softmax(logits)
        for p, o in zip(probs, offsets):
            boxes = decode_boxes(o, anchors, max_log_ratio=_MAX_LOG_RATIO)
            results.append(_postprocess(p, boxes, size, conf_threshold, nms_iou, top_k))
    return results


def predict(model: ModelState, img, conf_threshold: float = 0.05, nms_iou: float = 0.45,
            top_k: int = 100) -> list[Detection]:
    """Detections for one image, highest confidence first."""
    return predict_batch(model, np.asarray(img)[None], conf_threshold, nms_iou, top_k)[0]
