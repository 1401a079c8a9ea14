"""Rasters, PPM I/O, Gaussian blurring and weather corruption renderers.

Images are plain ``float64`` numpy arrays of shape ``(H, W, 3)`` with values
in ``[0, 1]``.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from ._backend import kernels
from .data import DatasetManifest, write_manifest
from .errors import ConfigError, CorruptionError, ImageFormatError

log = logging.getLogger(__name__)

KINDS = ("double_gaussian", "fog", "rain", "snow", "sand", "composite")

DEFAULT_PARAMS = {
    "double_gaussian": {"sigma1": 1.0, "sigma2": 2.0},
    "fog": {"t": 0.5, "airlight": 0.8},
    "rain": {"count": 40.0, "length": 8.0, "alpha": 0.6, "slant": 0.25, "brightness": 0.85},
    "snow": {"count": 60.0, "radius": 1.0, "alpha": 0.8},
    "sand": {"tint_r": 0.95, "tint_g": 0.8, "tint_b": 0.55, "sigma": 1.0},
    "composite": {},
}

_UNIT = {"t", "airlight", "alpha", "brightness", "tint_r", "tint_g", "tint_b"}
_NONNEG = {"sigma1", "sigma2", "sigma", "count", "length", "radius"}


def new_image(height: int, width: int, value: float = 0.0) -> np.ndarray:
    return np.full((height, width, 3), value, dtype=np.float64)


def _check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


# --------------------------------------------------------------------------
# Gaussian blurring
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Kernel1D:
    radius: int
    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) != 2 * self.radius + 1:
            raise ValueError("kernel length must be 2*radius+1")
        if any(v < 0 for v in w) or abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError("kernel weights must be non-negative and sum to 1")
        if any(w[i] != w[-1 - i] for i in range(self.radius)):
            raise ValueError("kernel must be symmetric")


def gaussian_kernel(sigma: float, radius: int | None = None) -> Kernel1D:
    """Sampled, normalized Gaussian truncated at ``ceil(3*sigma)`` taps.

    ``radius`` overrides the truncation. ``sigma == 0`` is the identity.
    """
    sigma = float(sigma)
    if not math.isfinite(sigma) or sigma < 0:
        raise ConfigError(f"sigma must be finite and >= 0, got {sigma}")
    if sigma == 0.0:
        return Kernel1D(0, (1.0,))
    if radius is None:
        radius = math.ceil(3.0 * sigma)
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(k * k) / (2.0 * sigma * sigma))
    w = w / w.sum()
    return Kernel1D(int(radius), tuple(w))


def convolve_separable(img: np.ndarray, k: Kernel1D) -> np.ndarray:
    """Separable blur with edge replication, clamped to [0, 1].

    The horizontal-then-vertical result is averaged with the
    vertical-then-horizontal one, which makes the output commute exactly
    with 90 degree rotations.
    """
    img = _check_image(img)
    if k.radius == 0 and k.weights[0] == 1.0:
        return img.copy()
    w = np.asarray(k.weights)
    hv = kernels.conv1d_edge(kernels.conv1d_edge(img, w, 1), w, 0)
    vh = kernels.conv1d_edge(kernels.conv1d_edge(img, w, 0), w, 1)
    return np.clip(0.5 * (hv + vh), 0.0, 1.0)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return convolve_separable(img, gaussian_kernel(sigma))


def double_gaussian_blur(img: np.ndarray, sigma1: float = 1.0, sigma2: float = 2.0) -> np.ndarray:
    k1 = gaussian_kernel(sigma1)
    k2 = gaussian_kernel(sigma2)
    return convolve_separable(convolve_separable(img, k1), k2)


# --------------------------------------------------------------------------
# Weather corruptions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0
    parts: tuple["CorruptionSpec", ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}")
        merged = dict(DEFAULT_PARAMS[self.kind])
        for key, value in dict(self.params).items():
            if key not in merged:
                raise ConfigError(f"unknown parameter {key!r} for corruption {self.kind!r}")
            merged[key] = float(value)
        for key, value in merged.items():
            if not math.isfinite(value):
                raise ConfigError(f"{self.kind}.{key} must be finite")
            if key in _UNIT and not 0.0 <= value <= 1.0:
                raise ConfigError(f"{self.kind}.{key}={value} outside [0, 1]")
            if key in _NONNEG and value < 0:
                raise ConfigError(f"{self.kind}.{key}={value} must be >= 0")
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "parts", tuple(self.parts))
        if self.kind == "composite" and not self.parts:
            raise ConfigError("composite corruption needs at least one part")
        if self.kind != "composite" and self.parts:
            raise ConfigError("only composite corruptions take parts")

    @property
    def tag(self) -> str:
        if self.kind == "composite":
            return "+".join(p.tag for p in self.parts)
        return self.kind

    def describe(self) -> str:
        """Canonical text form, used for cache keys and provenance."""
        if self.kind == "composite":
            inner = ",".join(p.describe() for p in self.parts)
            return f"composite(seed={self.seed};{inner})"
        ps = ";".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{self.kind}(seed={self.seed};{ps})"


def stream_key(seed: int, stream: str = "") -> int:
    """64-bit key for the counter-based generator, from (seed, stream)."""
    digest = hashlib.blake2b(f"{int(seed)}\x00{stream}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _rng(seed, stream):
    return np.random.Generator(np.random.Philox(key=stream_key(seed, stream)))


def _stroke_mask(h, w, rng, count, length, slant):
    mask = np.zeros((h, w), dtype=bool)
    n = int(round(count))
    if n == 0 or length <= 0:
        return mask
    x0 = rng.uniform(-length * abs(slant), w, size=n)
    y0 = rng.uniform(-length, h, size=n)
    lens = length * rng.uniform(0.6, 1.4, size=n)
    norm = math.hypot(slant, 1.0)
    dx, dy = slant / norm, 1.0 / norm
    for i in range(n):
        steps = np.arange(0.0, lens[i], 0.5)
        xs = np.floor(x0[i] + dx * steps).astype(np.int64)
        ys = np.floor(y0[i] + dy * steps).astype(np.int64)
        ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        mask[ys[ok], xs[ok]] = True
    return mask


def _flake_mask(h, w, rng, count, radius):
    mask = np.zeros((h, w), dtype=bool)
    n = int(round(count))
    if n == 0:
        return mask
    cx = rng.uniform(0, w, size=n)
    cy = rng.uniform(0, h, size=n)
    rr = radius * rng.uniform(0.5, 1.5, size=n)
    yy, xx = np.mgrid[0:h, 0:w]
    for i in range(n):
        mask |= (xx + 0.5 - cx[i]) ** 2 + (yy + 0.5 - cy[i]) ** 2 <= rr[i] ** 2
    return mask


def apply_corruption(img: np.ndarray, spec: CorruptionSpec, stream: str = "") -> np.ndarray:
    """Corrupt one image. Deterministic in ``(img, spec, stream)``.

    ``stream`` is mixed into the generator key; datasets pass the image
    path so each image draws independent but reproducible noise.
    """
    img = _check_image(img)
    p = spec.params
    if spec.kind == "composite":
        out = img
        for i, part in enumerate(spec.parts):
            out = apply_corruption(out, part, f"{stream}\x00{spec.seed}\x00{i}")
        return out
    if spec.kind == "double_gaussian":
        return double_gaussian_blur(img, p["sigma1"], p["sigma2"])
    if spec.kind == "fog":
        t = p["t"]
        return np.clip((1.0 - t) * img + t * p["airlight"], 0.0, 1.0)
    if spec.kind == "sand":
        tint = np.array([p["tint_r"], p["tint_g"], p["tint_b"]])
        return gaussian_blur(np.clip(img * tint, 0.0, 1.0), p["sigma"])

    h, w = img.shape[:2]
    rng = _rng(spec.seed, stream)
    if spec.kind == "rain":
        mask = _stroke_mask(h, w, rng, p["count"], p["length"], p["slant"])
        alpha, color = p["alpha"], p["brightness"]
    else:  # snow
        mask = _flake_mask(h, w, rng, p["count"], p["radius"])
        alpha, color = p["alpha"], 1.0
    a = alpha * mask[..., None]
    return np.clip((1.0 - a) * img + a * color, 0.0, 1.0)


def corrupt_dataset(m: DatasetManifest, spec: CorruptionSpec, out_dir,
                    manifest_name: str = "manifest.txt") -> DatasetManifest:
    """Corrupt every image of ``m`` into ``out_dir``.

    Relative image paths are preserved under ``out_dir``; annotations are
    copied as-is. The manifest is written only once every image succeeded.
    """
    out_dir = os.fspath(out_dir)
    if not m.records:
        return DatasetManifest((), m.class_set, f"{m.provenance}|{spec.describe()}", out_dir)
    records, failures = [], []
    for rec in m.records:
        rel = rec.image_path if not os.path.isabs(rec.image_path) else os.path.basename(rec.image_path)
        try:
            img = read_image(m.resolve(rec))
            out = apply_corruption(img, spec, stream=rel)
            dest = os.path.join(out_dir, rel)
            os.makedirs(os.path.dirname(dest) or ".", exist_ok=True)
            write_image(out, dest)
        except (OSError, ImageFormatError) as exc:
            failures.append((rec.image_path, str(exc)))
            continue
        records.append(replace(rec, image_path=rel, condition=f"corrupted:{spec.tag}"))
    if failures:
        for path, msg in failures:
            log.error("corruption failed for %s: %s", path, msg)
        raise CorruptionError(f"{len(failures)} of {len(m.records)} images failed", failures)
    out = DatasetManifest(records, m.class_set, f"{m.provenance}|{spec.describe()}", out_dir)
    write_manifest(out, os.path.join(out_dir, manifest_name))
    return out


# --------------------------------------------------------------------------
# PPM (P6) I/O
# --------------------------------------------------------------------------

def to_bytes(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(_check_image(img), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(img: np.ndarray, path) -> None:
    data = to_bytes(img)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def _header_tokens(buf: bytes, count: int):
    tokens, pos, n = [], 0, len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the payload
    if pos >= n:
        raise ImageFormatError("truncated PPM header")
    return tokens, pos + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise ImageFormatError(f"unsupported magic bytes {buf[:2]!r}; only binary PPM (P6) is read")
    tokens, offset = _header_tokens(buf, 4)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("non-numeric PPM header field") from None
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"invalid PPM size {w}x{h}")
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    need = w * h * 3
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise ImageFormatError(f"truncated PPM payload: {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())
