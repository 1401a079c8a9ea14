"""Multibox loss: softmax cross-entropy confidence term plus smooth-L1
localization term, normalized by the number of matched anchors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError

PROB_FLOOR = 1e-12
_MAX_CE = -math.log(PROB_FLOOR)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    conf: float
    loc: float
    alpha: float
    num_pos: int


def smooth_l1(x: float, y: float) -> float:
    d = abs(x - y)
    return 0.5 * d * d if d < 1.0 else d - 0.5


def smooth_l1_array(d: np.ndarray) -> np.ndarray:
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * d * d, a - 0.5)


def cross_entropy(p, label: int) -> float:
    """``-log p[label]`` with the probability floored at 1e-12."""
    return -math.log(max(float(p[label]), PROB_FLOOR))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _select_negatives(neg_loss, background, k):
    """Indices of the ``k`` background anchors with the largest loss;
    ties go to the lower anchor index."""
    cand = np.flatnonzero(background)
    if k <= 0 or len(cand) == 0:
        return cand[:0]
    order = np.argsort(-neg_loss[cand], kind="stable")
    return cand[order[:k]]


def multibox_loss(logits, offsets, labels, targets, alpha: float = 1.0, neg_ratio: float = 3.0,
                  with_grad: bool = False):
    """Loss of one image.

    ``logits`` is (n, C+1) with column 0 the background, ``labels`` holds 0
    for background or ``class + 1``. With ``with_grad`` also returns the
    gradients w.r.t. ``logits`` and ``offsets`` (hard-negative selection is
    treated as fixed).
    """
    logits = np.asarray(logits, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    labels = np.asarray(labels)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(labels)
    if logits.shape[0] != n or offsets.shape != (n, 4) or targets.shape != (n, 4):
        raise ContractError(
            f"length mismatch: logits {logits.shape}, offsets {offsets.shape}, "
            f"labels {labels.shape}, targets {targets.shape}")

    pos = labels > 0
    num_pos = int(pos.sum())
    if num_pos == 0:
        zero = LossBreakdown(0.0, 0.0, 0.0, alpha, 0)
        if with_grad:
            return zero, np.zeros_like(logits), np.zeros_like(offsets)
        return zero

    logp = log_softmax(logits)
    ce = np.minimum(-logp[np.arange(n), labels], _MAX_CE)
    k = int(min(math.floor(neg_ratio * num_pos), n - num_pos))
    neg = _select_negatives(ce, ~pos, k)
    chosen = np.concatenate([np.flatnonzero(pos), neg])
    conf = float(ce[chosen].sum())

    diff = offsets[pos] - targets[pos]
    loc = float(smooth_l1_array(diff).sum())
    total = (conf + alpha * loc) / num_pos
    out = LossBreakdown(total, conf, loc, alpha, num_pos)
    if not with_grad:
        return out

    dlogits = np.zeros_like(logits)
    live = chosen[ce[chosen] < _MAX_CE]
    dlogits[live] = np.exp(logp[live])
    dlogits[live, labels[live]] -= 1.0
    dlogits /= num_pos
    doffsets = np.zeros_like(offsets)
    doffsets[pos] = np.where(np.abs(diff) < 1.0, diff, np.sign(diff)) * (alpha / num_pos)
    return out, dlogits, doffsets
