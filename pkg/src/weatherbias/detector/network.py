"""Small convolutional backbone with class and box heads, hand-written
forward and backward passes.

Layout is NHWC. Three 3x3 conv + ReLU + 2x2 max-pool stages bring the input
down by 8 to the anchor grid; two 1x1 heads predict ``A*(C+1)`` logits and
``A*4`` offsets per cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._backend import kernels
from ..data import ClassSet
from ..errors import ConfigError, ContractError
from .anchors import AnchorConfig, generate_anchors


@dataclass(frozen=True)
class Architecture:
    input_size: int = 64
    channels: tuple[int, ...] = (16, 32, 32)
    num_classes: int = 4
    anchors: AnchorConfig = field(default_factory=AnchorConfig)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError("backbone needs exactly three positive channel widths")
        if self.input_size % 8:
            raise ConfigError("input size must be divisible by 8")
        if self.input_size // 8 != self.anchors.grid:
            raise ConfigError(f"anchor grid {self.anchors.grid} does not match feature map "
                              f"{self.input_size // 8}x{self.input_size // 8}")
        if self.num_classes < 1:
            raise ConfigError("need at least one foreground class")

    def layer_shapes(self):
        """Ordered (name, shape) of every parameter tensor."""
        c1, c2, c3 = self.channels
        a = self.anchors.per_cell
        k = self.num_classes + 1
        return [
            ("conv1.w", (27, c1)), ("conv1.b", (c1,)),
            ("conv2.w", (9 * c1, c2)), ("conv2.b", (c2,)),
            ("conv3.w", (9 * c2, c3)), ("conv3.b", (c3,)),
            ("cls.w", (c3, a * k)), ("cls.b", (a * k,)),
            ("box.w", (c3, a * 4)), ("box.b", (a * 4,)),
        ]

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layer_shapes())

    def descriptor(self) -> dict:
        return {
            "input_size": self.input_size,
            "channels": list(self.channels),
            "num_classes": self.num_classes,
            "grid": self.anchors.grid,
            "shapes": [list(s) for s in self.anchors.shapes],
            "pos_iou": self.anchors.pos_iou,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "Architecture":
        anchors = AnchorConfig(int(d["grid"]), tuple(tuple(s) for s in d["shapes"]), float(d["pos_iou"]))
        return cls(int(d["input_size"]), tuple(d["channels"]), int(d["num_classes"]), anchors)


@dataclass
class ModelState:
    arch: Architecture
    params: np.ndarray
    class_set: ClassSet = field(default_factory=ClassSet)
    step: int = 0
    loss_trace: tuple[float, ...] = ()

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (self.arch.num_params(),):
            raise ContractError(f"parameter vector has {self.params.size} entries, "
                                f"architecture needs {self.arch.num_params()}")
        if len(self.class_set) != self.arch.num_classes:
            raise ContractError("class set size does not match the architecture")
        if not np.all(np.isfinite(self.params)):
            raise ContractError("model parameters must be finite")

    def tensors(self, flat=None):
        """Named views into ``flat`` (default: the parameters)."""
        flat = self.params if flat is None else flat
        out, pos = {}, 0
        for name, shape in self.arch.layer_shapes():
            size = int(np.prod(shape))
            out[name] = flat[pos:pos + size].reshape(shape)
            pos += size
        return out

    def anchors(self) -> np.ndarray:
        return generate_anchors(self.arch.anchors, self.arch.input_size)

    def copy(self) -> "ModelState":
        return ModelState(self.arch, self.params.copy(), self.class_set, self.step, self.loss_trace)


def init_model(arch: Architecture = Architecture(), class_set: ClassSet = ClassSet(), seed: int = 0) -> ModelState:
    """He-scaled normal weights, zero biases."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    params = np.zeros(arch.num_params())
    model = ModelState(arch, params, class_set)
    for name, view in model.tensors().items():
        if name.endswith(".w"):
            fan_in = view.shape[0]
            view[...] = rng.standard_normal(view.shape) * np.sqrt(2.0 / fan_in)
    return model


def _as_batch(arch, images):
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    s = arch.input_size
    if x.shape[1:] != (s, s, 3):
        raise ContractError(f"expected {s}x{s}x3 input, got {x.shape[1:]}")
    return np.ascontiguousarray(x)


def forward_batch(model: ModelState, images, keep_cache: bool = False):
    """Logits (B, n_anchors, C+1) and offsets (B, n_anchors, 4)."""
    arch = model.arch
    t = model.tensors()
    x = _as_batch(arch, images)
    b = x.shape[0]
    cache = {}
    h = x
    for layer in ("conv1", "conv2", "conv3"):
        shape = h.shape
        cols = kernels.im2col3x3(h)
        w = t[layer + ".w"]
        z = (cols @ w + t[layer + ".b"]).reshape(shape[:3] + (w.shape[1],))
        r = np.maximum(z, 0.0)
        h, idx = kernels.maxpool2_forward(r)
        if keep_cache:
            cache[layer] = (cols, shape, z > 0.0, idx)
    g = arch.anchors.grid
    feat = h.reshape(b * g * g, -1)
    k = arch.num_classes + 1
    logits = (feat @ t["cls.w"] + t["cls.b"]).reshape(b, -1, k)
    offsets = (feat @ t["box.w"] + t["box.b"]).reshape(b, -1, 4)
    if keep_cache:
        cache["feat"] = feat
        cache["feat_shape"] = h.shape
        return logits, offsets, cache
    return logits, offsets


def backward_batch(model: ModelState, cache, dlogits, doffsets) -> np.ndarray:
    """Flat parameter gradient given upstream gradients of the two heads."""
    grad = np.zeros_like(model.params)
    gt = model.tensors(grad)
    t = model.tensors()
    feat = cache["feat"]
    a = model.arch.anchors.per_cell
    k = model.arch.num_classes + 1
    dl = np.asarray(dlogits).reshape(feat.shape[0], a * k)
    do = np.asarray(doffsets).reshape(feat.shape[0], a * 4)
    gt["cls.w"][...] = feat.T @ dl
    gt["cls.b"][...] = dl.sum(axis=0)
    gt["box.w"][...] = feat.T @ do
    gt["box.b"][...] = do.sum(axis=0)
    dh = (dl @ t["cls.w"].T + do @ t["box.w"].T).reshape(cache["feat_shape"])
    for layer in ("conv3", "conv2", "conv1"):
        cols, shape, active, idx = cache[layer]
        dz = kernels.maxpool2_backward(np.ascontiguousarray(dh), idx)
        dz *= active
        dz2 = dz.reshape(-1, dz.shape[-1])
        gt[layer + ".w"][...] = cols.T @ dz2
        gt[layer + ".b"][...] = dz2.sum(axis=0)
        if layer != "conv1":
            dh = kernels.col2im3x3(dz2 @ t[layer + ".w"].T, shape)
    return grad


def forward(model: ModelState, img):
    """Logits (n_anchors, C+1) and offsets (n_anchors, 4) for one image."""
    logits, offsets = forward_batch(model, _as_batch(model.arch, img)[:1])
    return logits[0], offsets[0]
