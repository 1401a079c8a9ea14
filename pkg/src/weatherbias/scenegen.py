"""Procedural traffic-like scenes with exact box labels.

Rendering works on an integer RGB raster and draws randomness only through
integer draws of a counter-based generator, so a ``(spec, index)`` pair
produces the same bytes on every machine.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .data import Annotation, BBox, ClassSet, DatasetManifest, Record, write_manifest
from .errors import ConfigError, GenerationError
from .imaging import stream_key, write_image

PALETTES = {
    # sky rgb, road rgb, horizon row as percent of height, speckle amplitude
    "voc": ((135, 175, 215), (95, 95, 100), 40, 10),
    "coco": ((200, 198, 182), (122, 106, 86), 50, 16),
}

DEFAULT_SCALES = {
    "car": (14, 30),
    "bus": (20, 36),
    "person": (8, 12),
    "bicycle": (14, 24),
}

CAR_COLORS = ((200, 30, 30), (30, 60, 190), (230, 230, 230), (160, 160, 170), (30, 140, 60))
BUS_COLORS = ((235, 190, 20), (240, 120, 20), (200, 60, 40))
SHIRT_COLORS = ((200, 40, 40), (40, 160, 60), (250, 250, 250), (240, 200, 40), (150, 60, 170))
SKIN = (222, 180, 140)
DARK = (28, 28, 32)
GLASS = (170, 215, 235)

MAX_RETRIES = 200
MIN_VISIBLE = (2, 5)  # occluded objects keep at least 40% of their pixels


@dataclass(frozen=True)
class SceneSpec:
    image_size: int = 64
    objects_per_image: tuple[int, int] = (1, 3)
    class_set: ClassSet = field(default_factory=ClassSet)
    class_weights: tuple[int, ...] = (1, 1, 1, 1)
    scales: tuple[tuple[int, int], ...] = tuple(DEFAULT_SCALES[c] for c in ("car", "bus", "person", "bicycle"))
    palette: str = "voc"
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.objects_per_image
        if lo < 1 or hi < lo:
            raise ConfigError(f"objects_per_image must satisfy 1 <= min <= max, got {self.objects_per_image}")
        if self.palette not in PALETTES:
            raise ConfigError(f"unknown palette {self.palette!r}")
        unknown = [c for c in self.class_set if c not in DEFAULT_SCALES]
        if unknown:
            raise ConfigError(f"no geometry template for classes {unknown}")
        if len(self.class_weights) != len(self.class_set) or len(self.scales) != len(self.class_set):
            raise ConfigError("class_weights and scales need one entry per class")
        if any(w < 0 for w in self.class_weights) or sum(self.class_weights) == 0:
            raise ConfigError("class_weights must be non-negative with a positive sum")
        limit = 0.6 * self.image_size
        for name, (smin, smax) in zip(self.class_set, self.scales):
            if smin > smax:
                raise ConfigError(f"{name}: scale range {smin}..{smax} is empty")
            if smin < 8:
                raise ConfigError(f"{name}: objects must be at least 8 px wide")
            if max(smax, _template_height(name, smax)) > limit:
                raise ConfigError(f"{name}: objects may not exceed 60% of the image side")

    def describe(self) -> str:
        return (f"scene(size={self.image_size};objects={self.objects_per_image};"
                f"classes={','.join(self.class_set)};weights={self.class_weights};"
                f"scales={self.scales};palette={self.palette};seed={self.seed})")


def _template_height(name, w):
    if name == "car":
        return (w + 1) // 2
    if name == "bus":
        return (w * 3) // 5
    if name == "person":
        return (w * 5) // 2
    return (w * 3) // 5  # bicycle


def _disc(mask, colors, cy2, cx2, r2, color):
    """Fill a disc. Centre and radius are in half-pixel units (doubled ints)."""
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    inside = (2 * yy + 1 - cy2) ** 2 + (2 * xx + 1 - cx2) ** 2 <= r2 * r2
    mask |= inside
    colors[inside] = color
    return inside


def _ring(mask, colors, cy2, cx2, r2, thick2, color):
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    d = (2 * yy + 1 - cy2) ** 2 + (2 * xx + 1 - cx2) ** 2
    inside = (d <= r2 * r2) & (d >= (r2 - thick2) ** 2)
    mask |= inside
    colors[inside] = color


def _line(mask, colors, y0, x0, y1, x1, color):
    """Integer Bresenham segment."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        mask[y0, x0] = True
        colors[y0, x0] = color
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _draw_template(name, w, rng):
    """Silhouette mask and per-pixel colours of one object in local coords."""
    h = _template_height(name, w)
    mask = np.zeros((h, w), dtype=bool)
    colors = np.zeros((h, w, 3), dtype=np.int64)
    if name == "car":
        body = CAR_COLORS[int(rng.integers(len(CAR_COLORS)))]
        cab = max(2, h // 3)
        inset = max(1, w // 5)
        mask[cab:h - 1, :] = True
        colors[cab:h - 1, :] = body
        mask[0:cab, inset:w - inset] = True
        colors[0:cab, inset:w - inset] = body
        if cab > 2:
            colors[1:cab, inset + 1:w - inset - 1] = GLASS
        r2 = max(3, h // 2)
        for cx in (w // 4, (3 * w) // 4):
            _disc(mask, colors, 2 * h - r2, 2 * cx + 1, r2, DARK)
    elif name == "bus":
        body = BUS_COLORS[int(rng.integers(len(BUS_COLORS)))]
        mask[0:h - 1, :] = True
        colors[0:h - 1, :] = body
        top, bot = max(1, h // 6), max(2, (2 * h) // 5)
        step = max(3, w // 6)
        for x in range(1, w - 2, step):
            colors[top:bot, x:min(x + step - 1, w - 1)] = GLASS
        r2 = max(3, h // 3)
        for cx in (w // 5, (4 * w) // 5):
            _disc(mask, colors, 2 * h - r2, 2 * cx + 1, r2, DARK)
    elif name == "person":
        shirt = SHIRT_COLORS[int(rng.integers(len(SHIRT_COLORS)))]
        head_d = max(3, (w * 2) // 3)
        _disc(mask, colors, head_d, w, head_d, SKIN)
        torso_top, torso_bot = head_d, (h * 3) // 5
        mask[torso_top:torso_bot, :] = True
        colors[torso_top:torso_bot, :] = shirt
        leg = max(2, w // 3)
        for x0 in (w // 2 - leg, w - w // 2):
            x0 = max(0, min(x0, w - leg))
            mask[torso_bot:h, x0:x0 + leg] = True
            colors[torso_bot:h, x0:x0 + leg] = (40, 45, 90)
    else:  # bicycle
        r2 = max(6, (w * 4) // 9)  # doubled wheel radius
        cy2 = 2 * h - r2
        left2, right2 = r2, 2 * w - r2
        _ring(mask, colors, cy2, left2, r2, 3, DARK)
        _ring(mask, colors, cy2, right2, r2, 3, DARK)
        cy, lx, rx = cy2 // 2, left2 // 2, right2 // 2
        mid = (lx + rx) // 2
        frame = (90, 90, 95)
        _line(mask, colors, cy, lx, cy, mid, frame)
        _line(mask, colors, cy, mid, 0, mid - 1, frame)
        _line(mask, colors, 0, mid - 1, cy, lx, frame)
        _line(mask, colors, cy, rx, 0, rx - 1, frame)
        _line(mask, colors, 0, mid - 2, 0, mid + 1, frame)
        _line(mask, colors, 0, rx - 2, 0, min(rx + 1, w - 1), frame)
    return mask, colors


def _tight(mask):
    ys = np.flatnonzero(mask.any(axis=1))
    xs = np.flatnonzero(mask.any(axis=0))
    return int(ys[0]), int(xs[0]), int(ys[-1]) + 1, int(xs[-1]) + 1


def _background(spec, rng):
    sky, road, horizon_pct, amp = PALETTES[spec.palette]
    s = spec.image_size
    img = np.empty((s, s, 3), dtype=np.int64)
    horizon = (s * horizon_pct) // 100
    img[:horizon] = sky
    img[horizon:] = road
    # dashed lane marking
    lane_y = horizon + (s - horizon) // 2
    for x in range(int(rng.integers(0, 6)), s, 10):
        img[lane_y:lane_y + 1, x:x + 5] = (220, 220, 210)
    noise = rng.integers(-amp, amp + 1, size=(s, s, 1))
    return img + noise, horizon


def render_scene(spec: SceneSpec, index: int):
    """Render scene ``index`` of ``spec``. Returns ``(image, annotations)``."""
    rng = np.random.Generator(np.random.Philox(key=stream_key(spec.seed, f"scene:{index}")))
    canvas, horizon = _background(spec, rng)
    s = spec.image_size
    owner = np.full((s, s), -1, dtype=np.int64)
    lo, hi = spec.objects_per_image
    count = int(rng.integers(lo, hi + 1))
    weights = np.asarray(spec.class_weights, dtype=np.int64)
    cum = np.cumsum(weights)

    placed = []  # (class_id, mask_area, bbox tuple)
    for obj in range(count):
        for _ in range(MAX_RETRIES):
            class_id = int(np.searchsorted(cum, int(rng.integers(cum[-1])), side="right"))
            name = spec.class_set.names[class_id]
            smin, smax = spec.scales[class_id]
            w = int(rng.integers(smin, smax + 1))
            mask, colors = _draw_template(name, w, rng)
            y0, x0, y1, x1 = _tight(mask)
            mask, colors = mask[y0:y1, x0:x1], colors[y0:y1, x0:x1]
            h, w = mask.shape
            bottom_lo = max(h, min(horizon + 2, s))
            bottom = int(rng.integers(bottom_lo, s + 1))
            top = bottom - h
            left = int(rng.integers(0, s - w + 1))
            trial = owner.copy()
            region = trial[top:bottom, left:left + w]
            region[mask] = obj
            ok = all(
                MIN_VISIBLE[1] * np.count_nonzero(trial == j) >= MIN_VISIBLE[0] * area
                for j, (_, area, _) in enumerate(placed)
            )
            if ok:
                owner = trial
                canvas[top:bottom, left:left + w][mask] = colors[mask]
                placed.append((class_id, int(mask.sum()), (left, top, left + w, bottom)))
                break
        else:
            raise GenerationError(f"scene {index}: could not place object {obj} after {MAX_RETRIES} retries")

    img = np.clip(canvas, 0, 255).astype(np.float64) / 255.0
    anns = [Annotation(BBox(*map(float, box)), cid) for cid, _, box in placed]
    return img, anns


def generate_dataset(spec: SceneSpec, n: int, out_dir, start: int = 0,
                     manifest_name: str = "manifest.txt") -> DatasetManifest:
    """Render scenes ``start .. start+n-1`` into ``out_dir/images`` plus a manifest."""
    if n < 0:
        raise ConfigError(f"n must be >= 0, got {n}")
    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    records = []
    for index in range(start, start + n):
        img, anns = render_scene(spec, index)
        rel = f"images/{index:06d}.ppm"
        write_image(img, os.path.join(out_dir, rel))
        records.append(Record(rel, (spec.image_size, spec.image_size), anns))
    m = DatasetManifest(records, spec.class_set, f"{spec.describe()}[{start}:{start + n}]", out_dir)
    write_manifest(m, os.path.join(out_dir, manifest_name))
    return m
