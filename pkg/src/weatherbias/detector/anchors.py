"""Default boxes, ground-truth matching and offset encoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .._backend import kernels
from ..data import Annotation, BBox
from ..errors import ConfigError, EncodingError

VARIANCES = (0.1, 0.2)  # (centre, size)


@dataclass(frozen=True)
class AnchorConfig:
    grid: int = 8
    shapes: tuple[tuple[float, float], ...] = ((0.20, 1.0), (0.40, 1.0), (0.30, 2.0))
    pos_iou: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple((float(s), float(r)) for s, r in self.shapes))
        if self.grid < 1:
            raise ConfigError("anchor grid must be >= 1")
        if not self.shapes:
            raise ConfigError("at least one anchor shape is required")
        for scale, ratio in self.shapes:
            if not 0.0 < scale <= 1.0 or ratio <= 0.0:
                raise ConfigError(f"invalid anchor shape ({scale}, {ratio})")
        if not 0.0 < self.pos_iou < 1.0:
            raise ConfigError("pos_iou must be in (0, 1)")

    @property
    def per_cell(self) -> int:
        return len(self.shapes)

    def count(self) -> int:
        return self.grid * self.grid * self.per_cell


def generate_anchors(cfg: AnchorConfig, image_size: int) -> np.ndarray:
    """(G*G*A, 4) corner boxes, row-major over cells then by shape index,
    clipped to the image."""
    step = image_size / cfg.grid
    out = np.empty((cfg.grid, cfg.grid, cfg.per_cell, 4), dtype=np.float64)
    for i in range(cfg.grid):
        cy = (i + 0.5) * step
        for j in range(cfg.grid):
            cx = (j + 0.5) * step
            for a, (scale, ratio) in enumerate(cfg.shapes):
                w = scale * image_size * math.sqrt(ratio)
                h = scale * image_size / math.sqrt(ratio)
                out[i, j, a] = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
    out = out.reshape(-1, 4)
    np.clip(out, 0.0, float(image_size), out=out)
    return out


@dataclass
class MatchAssignment:
    """Per-anchor labels (0 = background, ``c + 1`` for class ``c``) and the
    index of the matched ground truth (-1 for none)."""

    labels: np.ndarray
    matched_gt: np.ndarray
    num_gt: int = 0

    @property
    def num_positive(self) -> int:
        return int(np.count_nonzero(self.labels))

    def indicator(self) -> np.ndarray:
        """Dense x[i, j] in {0, 1} linking anchor i to ground truth j."""
        x = np.zeros((len(self.labels), self.num_gt), dtype=np.int8)
        pos = np.flatnonzero(self.matched_gt >= 0)
        x[pos, self.matched_gt[pos]] = 1
        return x


def _gt_arrays(gts):
    boxes = np.array([g.bbox.as_tuple() for g in gts], dtype=np.float64).reshape(-1, 4)
    classes = np.array([g.class_id for g in gts], dtype=np.int64)
    return boxes, classes


def match_anchors(anchors: np.ndarray, gts: Sequence[Annotation], pos_iou: float = 0.5) -> MatchAssignment:
    """Two-step SSD matching.

    First every ground truth claims one anchor through greedy bipartite
    matching on IoU (highest pair first, ties to the lowest anchor then
    ground-truth index). Remaining anchors whose best IoU reaches
    ``pos_iou`` take their argmax ground truth.
    """
    n = len(anchors)
    labels = np.zeros(n, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    if not gts:
        return MatchAssignment(labels, matched, 0)
    boxes, classes = _gt_arrays(gts)
    ious = kernels.iou_matrix(anchors, boxes)  # (n, m)

    work = ious.copy()
    for _ in range(min(len(gts), n)):
        # argmax over the flattened (anchor, gt) table is row-major, so ties
        # go to the lowest anchor index first and then the lowest gt index
        flat = int(np.argmax(work))
        i, j = divmod(flat, work.shape[1])
        if work[i, j] < 0:
            break
        matched[i] = j
        work[i, :] = -1.0
        work[:, j] = -1.0

    best_gt = np.argmax(ious, axis=1)
    best_iou = ious[np.arange(n), best_gt]
    free = (matched < 0) & (best_iou >= pos_iou)
    matched[free] = best_gt[free]
    pos = matched >= 0
    labels[pos] = classes[matched[pos]] + 1
    return MatchAssignment(labels, matched, len(gts))


def _centre_form(b):
    b = np.asarray(b, dtype=np.float64)
    w = b[..., 2] - b[..., 0]
    h = b[..., 3] - b[..., 1]
    return b[..., 0] + 0.5 * w, b[..., 1] + 0.5 * h, w, h


def encode_boxes(gt: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Vectorized offset encoding of (n, 4) boxes against (n, 4) anchors."""
    gcx, gcy, gw, gh = _centre_form(gt)
    acx, acy, aw, ah = _centre_form(anchors)
    if np.any(gw <= 0) or np.any(gh <= 0):
        raise EncodingError("ground-truth boxes need positive width and height")
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise EncodingError("anchors need positive area")
    vc, vs = VARIANCES
    return np.stack([(gcx - acx) / aw / vc, (gcy - acy) / ah / vc,
                     np.log(gw / aw) / vs, np.log(gh / ah) / vs], axis=-1)


def decode_boxes(t: np.ndarray, anchors: np.ndarray, max_log_ratio: float | None = None) -> np.ndarray:
    acx, acy, aw, ah = _centre_form(anchors)
    t = np.asarray(t, dtype=np.float64)
    vc, vs = VARIANCES
    cx = acx + t[..., 0] * vc * aw
    cy = acy + t[..., 1] * vc * ah
    lw, lh = t[..., 2] * vs, t[..., 3] * vs
    if max_log_ratio is not None:
        lw = np.minimum(lw, max_log_ratio)
        lh = np.minimum(lh, max_log_ratio)
    w = aw * np.exp(lw)
    h = ah * np.exp(lh)
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def encode_box(gt: BBox, anchor: BBox) -> tuple[float, float, float, float]:
    t = encode_boxes(np.array(gt.as_tuple()), np.array(anchor.as_tuple()))
    return tuple(float(v) for v in t)


def decode_box(t, anchor: BBox) -> BBox:
    b = decode_boxes(np.asarray(t, dtype=np.float64), np.array(anchor.as_tuple()))
    return BBox(*(float(v) for v in b))


def build_targets(anchors: np.ndarray, gts: Sequence[Annotation], pos_iou: float):
    """Labels and encoded regression targets for one image.

    Targets are zero for background anchors.
    """
    assign = match_anchors(anchors, gts, pos_iou)
    targets = np.zeros((len(anchors), 4), dtype=np.float64)
    pos = np.flatnonzero(assign.matched_gt >= 0)
    if len(pos):
        boxes, _ = _gt_arrays(gts)
        targets[pos] = encode_boxes(boxes[assign.matched_gt[pos]], anchors[pos])
    return assign, targets
