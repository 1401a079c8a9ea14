"""Geometric and dataset types, annotation parsers and manifest I/O.

Boxes use half-open continuous pixel coordinates with the origin at the top
left, so ``area = (xmax - xmin) * (ymax - ymin)`` with no ``+1`` terms.
"""

from __future__ import annotations

import json
import logging
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, VersionError

log = logging.getLogger(__name__)

DEFAULT_CLASSES = ("car", "bus", "person", "bicycle")
MANIFEST_HEADER = "weatherbias-manifest v1"
CLEAN = "clean"


@dataclass(frozen=True)
class BBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        coords = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if min(coords) < 0:
            raise ValueError(f"negative box coordinates {coords}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"degenerate box {coords}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    def contains(self, other: "BBox") -> bool:
        return (self.xmin <= other.xmin and self.ymin <= other.ymin
                and other.xmax <= self.xmax and other.ymax <= self.ymax)


@dataclass(frozen=True)
class Annotation:
    bbox: BBox
    class_id: int
    difficult: bool = False


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ClassSet:
    names: tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"duplicate class names in {self.names}")
        for name in self.names:
            if not name or any(ch in name for ch in ",\t\n"):
                raise ConfigError(f"invalid class name {name!r}")

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def get(self, name: str):
        try:
            return self.names.index(name)
        except ValueError:
            return None


@dataclass(frozen=True)
class Record:
    image_path: str
    image_size: tuple[int, int]  # (W, H)
    annotations: tuple[Annotation, ...] = ()
    condition: str = CLEAN

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[Record, ...]
    class_set: ClassSet = field(default_factory=ClassSet)
    provenance: str = ""
    # Directory that relative image paths resolve against; not serialized.
    root: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        n_classes = len(self.class_set)
        for rec in self.records:
            w, h = rec.image_size
            for ann in rec.annotations:
                if not 0 <= ann.class_id < n_classes:
                    raise ConfigError(
                        f"{rec.image_path}: class_id {ann.class_id} outside class set of size {n_classes}")
                b = ann.bbox
                if b.xmax > w or b.ymax > h:
                    raise ConfigError(f"{rec.image_path}: box {b.as_tuple()} exceeds image {w}x{h}")

    def __len__(self):
        return len(self.records)

    def resolve(self, rec: Record) -> str:
        if os.path.isabs(rec.image_path) or not self.root:
            return rec.image_path
        return os.path.join(self.root, rec.image_path)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


# --------------------------------------------------------------------------
# Annotation formats
# --------------------------------------------------------------------------

def _line_col_to_offset(document: bytes, line: int, col: int) -> int:
    lines = document.split(b"\n")
    return sum(len(l) + 1 for l in lines[: max(line - 1, 0)]) + col


def _clip_box(x0, y0, x1, y1, w, h):
    return max(0.0, x0), max(0.0, y0), min(float(w), x1), min(float(h), y1)


def parse_voc_xml(document: bytes, class_set: ClassSet = ClassSet()):
    """Parse one VOC-style annotation file.

    Returns ``(annotations, (W, H))``. Objects whose name is not part of
    ``class_set`` are dropped.
    """
    if isinstance(document, str):
        document = document.encode("utf-8")
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, col = exc.position
        offset = _line_col_to_offset(document, line, col)
        raise ParseError(f"malformed VOC XML at byte {offset}: {exc}", offset=offset) from None

    size = root.find("size")
    if size is None:
        raise ParseError("VOC XML has no <size> element")
    try:
        width = int(float(size.findtext("width")))
        height = int(float(size.findtext("height")))
    except (TypeError, ValueError):
        raise ParseError("VOC <size> lacks numeric width/height") from None

    annotations = []
    for i, obj in enumerate(root.findall("object")):
        name = (obj.findtext("name") or "").strip()
        class_id = class_set.get(name)
        if class_id is None:
            continue
        bnd = obj.find("bndbox")
        if bnd is None:
            raise ParseError(f"object {i} ({name}) has no <bndbox>", record=i)
        coords = []
        for tag in ("xmin", "ymin", "xmax", "ymax"):
            text = bnd.findtext(tag)
            if text is None:
                raise ParseError(f"object {i} ({name}) is missing <{tag}>", record=i)
            try:
                coords.append(float(text))
            except ValueError:
                raise ParseError(f"object {i} ({name}) has non-numeric <{tag}>", record=i) from None
        difficult = (obj.findtext("difficult") or "0").strip() == "1"
        try:
            bbox = BBox(*_clip_box(*coords, width, height))
        except ValueError as exc:
            raise ParseError(f"object {i} ({name}): {exc}", record=i) from None
        annotations.append(Annotation(bbox, class_id, difficult))
    return annotations, (width, height)


def parse_coco_json(document: bytes, class_set: ClassSet = ClassSet(),
                    provenance: str = "coco") -> DatasetManifest:
    """Convert a COCO annotation file into a manifest fragment.

    Boxes go from ``[x, y, w, h]`` to corner form, categories are mapped by
    name and unknown categories are dropped. ``iscrowd`` regions are kept
    as difficult annotations.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed COCO JSON at byte {exc.pos}: {exc.msg}", offset=exc.pos) from None
    if not isinstance(doc, dict):
        raise ParseError("COCO document must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise ParseError(f"COCO document is missing the '{key}' array")

    cat_to_class = {}
    for cat in doc["categories"]:
        cid = class_set.get(cat.get("name", ""))
        if cid is not None:
            cat_to_class[cat["id"]] = cid

    images = {}
    order = []
    for img in doc["images"]:
        images[img["id"]] = (img["file_name"], int(img["width"]), int(img["height"]))
        order.append(img["id"])
    per_image = {img_id: [] for img_id in order}

    dropped = 0
    for i, ann in enumerate(doc["annotations"]):
        if ann.get("image_id") not in images:
            raise ParseError(f"annotation {i} references unknown image id {ann.get('image_id')!r}", record=i)
        class_id = cat_to_class.get(ann.get("category_id"))
        if class_id is None:
            dropped += 1
            continue
        _, w, h = images[ann["image_id"]]
        x, y, bw, bh = (float(v) for v in ann["bbox"])
        try:
            bbox = BBox(*_clip_box(x, y, x + bw, y + bh, w, h))
        except ValueError as exc:
            raise ParseError(f"annotation {i}: {exc}", record=i) from None
        per_image[ann["image_id"]].append(Annotation(bbox, class_id, bool(ann.get("iscrowd", 0))))
    if dropped:
        log.info("dropped %d COCO annotations outside the class set", dropped)

    records = [Record(images[i][0], images[i][1:], per_image[i]) for i in order]
    return DatasetManifest(records, class_set, provenance)


# --------------------------------------------------------------------------
# Manifest transforms
# --------------------------------------------------------------------------

def filter_classes(m: DatasetManifest, keep: ClassSet | Sequence[str]) -> DatasetManifest:
    """Drop annotations outside ``keep`` and remap class ids to its order."""
    if not isinstance(keep, ClassSet):
        keep = ClassSet(tuple(keep))
    missing = [n for n in keep if m.class_set.get(n) is None]
    if missing:
        raise ConfigError(f"classes {missing} are not in the source class set {m.class_set.names}")
    remap = {m.class_set.index(n): keep.index(n) for n in keep}
    records = []
    for rec in m.records:
        anns = tuple(replace(a, class_id=remap[a.class_id]) for a in rec.annotations if a.class_id in remap)
        records.append(replace(rec, annotations=anns))
    return DatasetManifest(records, keep, m.provenance, m.root)


def _make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def mix_datasets(clean: DatasetManifest, corrupted: DatasetManifest,
                 fraction_corrupted: float, seed: int) -> DatasetManifest:
    """All of ``clean`` plus ``floor(fraction * |corrupted|)`` corrupted records.

    Records are sampled without replacement and shuffled with a seeded
    generator. Both inputs must resolve images against the same root or
    carry absolute paths; the mixed manifest keeps paths relative to the
    clean root by rewriting corrupted paths.
    """
    if clean.class_set != corrupted.class_set:
        raise ConfigError("cannot mix manifests with different class sets")
    if not 0.0 <= fraction_corrupted <= 1.0:
        raise ConfigError(f"fraction_corrupted {fraction_corrupted} outside [0, 1]")
    k = math.floor(Fraction(repr(float(fraction_corrupted))) * len(corrupted))
    rng = _make_rng(seed)
    picked = sorted(rng.choice(len(corrupted), size=k, replace=False).tolist()) if k else []

    root = clean.root
    extra = []
    for i in picked:
        rec = corrupted.records[i]
        path = corrupted.resolve(rec)
        if root and not os.path.isabs(rec.image_path):
            path = os.path.relpath(path, root)
        extra.append(replace(rec, image_path=path))
    records = list(clean.records) + extra
    order = rng.permutation(len(records))
    mixed = [records[i] for i in order]
    prov = f"mix({clean.provenance}|{corrupted.provenance}|f={fraction_corrupted!r}|seed={seed})"
    return DatasetManifest(mixed, clean.class_set, prov, root)


# --------------------------------------------------------------------------
# Native manifest format
# --------------------------------------------------------------------------

def _format_annotations(anns: Sequence[Annotation]) -> str:
    parts = []
    for a in anns:
        b = a.bbox
        s = f"{a.class_id}:{b.xmin!r},{b.ymin!r},{b.xmax!r},{b.ymax!r}"
        if a.difficult:
            s += ":d"
        parts.append(s)
    return ";".join(parts)


def _parse_annotations(text: str, lineno: int) -> tuple[Annotation, ...]:
    if not text:
        return ()
    out = []
    for chunk in text.split(";"):
        pieces = chunk.split(":")
        if len(pieces) not in (2, 3) or (len(pieces) == 3 and pieces[2] != "d"):
            raise ParseError(f"manifest line {lineno}: bad annotation {chunk!r}", record=lineno)
        try:
            coords = [float(v) for v in pieces[1].split(",")]
            out.append(Annotation(BBox(*coords), int(pieces[0]), len(pieces) == 3))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"manifest line {lineno}: {exc}", record=lineno) from None
    return tuple(out)


def manifest_to_text(m: DatasetManifest) -> str:
    lines = [MANIFEST_HEADER,
             "#classes\t" + ",".join(m.class_set.names),
             "#provenance\t" + m.provenance.replace("\n", " ").replace("\t", " ")]
    for rec in m.records:
        w, h = rec.image_size
        lines.append("\t".join([rec.image_path, str(w), str(h), rec.condition,
                                _format_annotations(rec.annotations)]))
    return "\n".join(lines) + "\n"


def manifest_from_text(text: str, root: str = "") -> DatasetManifest:
    lines = text.split("\n")
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise VersionError(f"expected manifest header {MANIFEST_HEADER!r}, got {lines[0][:40]!r}")
    classes = DEFAULT_CLASSES
    provenance = ""
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("\t")
            if key == "classes":
                classes = tuple(value.split(",")) if value else ()
            elif key == "provenance":
                provenance = value
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ParseError(f"manifest line {lineno}: expected 5 tab-separated fields, got {len(fields)}",
                             record=lineno)
        path, w, h, condition, anns = fields
        records.append(Record(path, (int(w), int(h)), _parse_annotations(anns, lineno), condition))
    return DatasetManifest(records, ClassSet(classes), provenance, root)


def write_manifest(m: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest_to_text(m))


def read_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return manifest_from_text(text, root=os.path.dirname(os.path.abspath(path)))
