"""Batch gradients and SGD training loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..data import Annotation, DatasetManifest
from ..errors import ConfigError, ContractError, TrainingError
from ..imaging import read_image
from .anchors import build_targets
from .loss import multibox_loss
from .network import ModelState, backward_batch, forward_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    steps: int = 500
    alpha: float = 1.0
    neg_ratio: float = 3.0
    seed: int = 0
    momentum: float = 0.0
    lr_steps: tuple[int, ...] = ()  # multiply the rate by lr_gamma at each of these steps
    lr_gamma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "lr_steps", tuple(sorted(int(s) for s in self.lr_steps)))
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if any(s < 1 for s in self.lr_steps):
            raise ConfigError("lr_steps must be positive")
        if not 0.0 < self.lr_gamma <= 1.0:
            raise ConfigError("lr_gamma must be in (0, 1]")

    def rate_at(self, step: int) -> float:
        drops = sum(1 for s in self.lr_steps if step >= s)
        return self.learning_rate * self.lr_gamma ** drops

    def describe(self) -> str:
        return (f"train(lr={self.learning_rate!r};bs={self.batch_size};steps={self.steps};"
                f"alpha={self.alpha!r};neg={self.neg_ratio!r};seed={self.seed};mom={self.momentum!r};"
                f"lr_steps={list(self.lr_steps)};gamma={self.lr_gamma!r})")


def _targets_for(model, annotations):
    anchors = model.anchors()
    labels, targets = [], []
    for anns in annotations:
        assign, tgt = build_targets(anchors, anns, model.arch.anchors.pos_iou)
        labels.append(assign.labels)
        targets.append(tgt)
    return np.stack(labels), np.stack(targets)


def _batch_loss_grad(model, images, labels, targets, cfg, offset=0):
    logits, offsets, cache = forward_batch(model, images, keep_cache=True)
    b = len(images)
    dlogits = np.empty_like(logits)
    doffsets = np.empty_like(offsets)
    total = 0.0
    for i in range(b):
        out, dl, do = multibox_loss(logits[i], offsets[i], labels[i], targets[i],
                                    cfg.alpha, cfg.neg_ratio, with_grad=True)
        if not np.isfinite(out.total):
            raise TrainingError(f"non-finite loss for image {offset + i}", image_index=offset + i)
        total += out.total
        dlogits[i] = dl / b
        doffsets[i] = do / b
    grad = backward_batch(model, cache, dlogits, doffsets)
    return total / b, grad


def loss_and_gradient(model: ModelState, batch: Sequence[tuple[np.ndarray, Sequence[Annotation]]],
                      cfg: TrainConfig = TrainConfig()):
    """Mean multibox loss over ``batch`` and its gradient w.r.t. every parameter."""
    if not batch:
        raise ContractError("batch must not be empty")
    images = np.stack([img for img, _ in batch])
    labels, targets = _targets_for(model, [anns for _, anns in batch])
    return _batch_loss_grad(model, images, labels, targets, cfg)


def loss_gradient(model, batch, cfg: TrainConfig = TrainConfig()) -> np.ndarray:
    return loss_and_gradient(model, batch, cfg)[1]


def batch_loss(model, batch, cfg: TrainConfig = TrainConfig()) -> float:
    """Mean loss without the backward pass."""
    images = np.stack([img for img, _ in batch])
    labels, targets = _targets_for(model, [anns for _, anns in batch])
    logits, offsets = forward_batch(model, images)
    return float(np.mean([
        multibox_loss(logits[i], offsets[i], labels[i], targets[i], cfg.alpha, cfg.neg_ratio).total
        for i in range(len(images))]))


def load_images(data: DatasetManifest, reads: list | None = None) -> np.ndarray:
    """Decode every image of ``data``; resolved paths are appended to ``reads``."""
    out = []
    for rec in data.records:
        path = data.resolve(rec)
        if reads is not None:
            reads.append(path)
        out.append(read_image(path))
    return np.stack(out) if out else np.zeros((0, 0, 0, 3))


def _index_stream(n, batch_size, rng):
    buf = np.empty(0, dtype=np.int64)
    while True:
        while len(buf) < batch_size:
            buf = np.concatenate([buf, rng.permutation(n)])
        yield buf[:batch_size]
        buf = buf[batch_size:]


def train(model: ModelState, data: DatasetManifest, cfg: TrainConfig, reads: list | None = None,
          images: np.ndarray | None = None) -> ModelState:
    """``cfg.steps`` SGD updates over seeded shuffled mini-batches.

    Returns a new model; the input model is left untouched. The per-step
    batch loss is stored in ``loss_trace``.
    """
    if not data.records:
        raise ContractError("training data is empty")
    if data.class_set != model.class_set:
        raise ConfigError("training data and model use different class sets")
    out = model.copy()
    if cfg.steps == 0:
        return out
    if images is None:
        images = load_images(data, reads)
    labels, targets = _targets_for(model, [r.annotations for r in data.records])

    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    batches = _index_stream(len(images), cfg.batch_size, rng)
    velocity = np.zeros_like(out.params)
    trace = []
    for step in range(cfg.steps):
        idx = next(batches)
        loss, grad = _batch_loss_grad(out, images[idx], labels[idx], targets[idx], cfg)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingError(f"loss diverged at step {step}", step=step)
        rate = cfg.rate_at(step)
        if cfg.momentum:
            velocity = cfg.momentum * velocity + grad
            out.params -= rate * velocity
        else:
            out.params -= rate * grad
        trace.append(float(loss))
        if step % 100 == 0:
            log.debug("step %d loss %.4f", step, loss)
    out.step = model.step + cfg.steps
    out.loss_trace = model.loss_trace + tuple(trace)
    return out


def fine_tune(model: ModelState, target: DatasetManifest, cfg: TrainConfig, reads: list | None = None) -> ModelState:
    """Continue training ``model`` on ``target``. Same mechanics as :func:`train`;
    callers usually pass a reduced learning rate."""
    return train(model, target, cfg, reads)


def fine_tune_config(cfg: TrainConfig, steps: int | None = None) -> TrainConfig:
    """Default fine-tuning recipe: a tenth of the training learning rate."""
    steps = cfg.steps if steps is None else steps
    return replace(cfg, learning_rate=cfg.learning_rate / 10.0, steps=steps,
                   lr_steps=tuple(s for s in cfg.lr_steps if s < steps))
