"""Experiment configuration in the ``wbh-config v1`` text format.

The format is INI-like: a mandatory first line ``wbh-config v1``, then
``[section]`` blocks of ``key = value`` lines. ``#`` and ``;`` start
comments. Sections::

    [experiment]          seed, stages, out, n_train, n_test, mix_fraction, cache
    [scene.a] [scene.b]   palette, image_size, objects_min, objects_max,
                          class_weights, scales ("car 14-30, bus 20-36"), seed
    [train]               learning_rate, momentum, batch_size, steps,
                          lr_steps, lr_gamma, alpha, neg_ratio
    [finetune]            learning_rate, steps, momentum, lr_steps, lr_gamma
    [corruption.target]   kind, seed, parts (composite) or kind parameters
    [corruption.target.<part>]   kind (defaults to <part>) and parameters
    [corruption.train]    same layout as corruption.target
    [eval]                iou_thresh, method, conf_threshold, nms_iou
    [bounds]              stage1_min_map, stage2_max_fraction, tech2_min_ratio

Seeds not given explicitly are derived from ``experiment.seed`` and the
section name, so changing one section's seed leaves every other seed alone.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from importlib import resources

from ..data import DEFAULT_CLASSES, ClassSet
from ..detector.anchors import AnchorConfig
from ..detector.network import Architecture
from ..detector.training import TrainConfig
from ..errors import ConfigError
from ..evaluation import METHODS
from ..imaging import KINDS, CorruptionSpec, stream_key
from ..scenegen import DEFAULT_SCALES, SceneSpec

HEADER = "wbh-config v1"
STAGES = ("stage1", "stage2", "stage3", "stage4", "tech1", "tech2")
DEPENDS = {"stage2": ("stage1",), "tech1": ("stage1",)}

_KNOWN = {
    "experiment": {"seed", "stages", "out", "n_train", "n_test", "mix_fraction", "cache"},
    "scene": {"palette", "image_size", "objects_min", "objects_max", "class_weights", "seed", "classes",
              "scales"},
    "train": {"learning_rate", "momentum", "batch_size", "steps", "lr_steps", "lr_gamma", "alpha", "neg_ratio"},
    "finetune": {"learning_rate", "momentum", "steps", "lr_steps", "lr_gamma"},
    "eval": {"iou_thresh", "method", "conf_threshold", "nms_iou"},
    "bounds": {"stage1_min_map", "stage2_max_fraction", "tech2_min_ratio"},
}


def derive_seed(seed: int, name: str) -> int:
    """Independent 63-bit seed for the component ``name``."""
    return stream_key(seed, name) & (2**63 - 1)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresh: float = 0.5
    method: str = "11point"
    conf_threshold: float = 0.05
    nms_iou: float = 0.45

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"eval.method must be one of {METHODS}")
        if not 0.0 < self.iou_thresh <= 1.0 or not 0.0 < self.nms_iou <= 1.0:
            raise ConfigError("IoU thresholds must be in (0, 1]")
        if not 0.0 <= self.conf_threshold < 1.0:
            raise ConfigError("eval.conf_threshold must be in [0, 1)")


@dataclass(frozen=True)
class Bounds:
    stage1_min_map: float = 50.0
    stage2_max_fraction: float = 0.5
    tech2_min_ratio: float = 2.0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    stages: tuple[str, ...] = STAGES
    out: str = "runs/default"
    n_train: int = 400
    n_test: int = 100
    mix_fraction: float = 0.10
    cache: bool = True
    scene_a: SceneSpec = field(default_factory=SceneSpec)
    scene_b: SceneSpec = field(default_factory=lambda: SceneSpec(palette="coco", seed=1))
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-4))
    target: CorruptionSpec = field(default_factory=lambda: CorruptionSpec("fog"))
    train_corruption: CorruptionSpec = field(default_factory=lambda: CorruptionSpec("double_gaussian"))
    eval: EvalConfig = field(default_factory=EvalConfig)
    bounds: Bounds = field(default_factory=Bounds)

    def __post_init__(self):
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; valid: {', '.join(STAGES)}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")
        if not 0.0 <= self.mix_fraction <= 1.0:
            raise ConfigError("mix_fraction must be in [0, 1]")
        if self.scene_a.image_size != self.scene_b.image_size:
            raise ConfigError("both scene families must use the same image size")
        if self.scene_a.class_set != self.scene_b.class_set:
            raise ConfigError("both scene families must use the same class set")

    @property
    def arch(self) -> Architecture:
        size = self.scene_a.image_size
        return Architecture(size, num_classes=len(self.scene_a.class_set),
                            anchors=AnchorConfig(grid=size // 8))

    def ordered_stages(self) -> tuple[str, ...]:
        """Requested stages plus their dependencies, in execution order."""
        want = set(self.stages)
        for s in self.stages:
            want.update(DEPENDS.get(s, ()))
        return tuple(s for s in STAGES if s in want)

    def model_seed(self, family: str) -> int:
        return derive_seed(self.seed, f"model.{family}")

    def shuffle_seed(self, family: str) -> int:
        return derive_seed(self.seed, f"shuffle.{family}")

    def mix_seed(self) -> int:
        return derive_seed(self.seed, "mix")


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

def _section_kind(name: str) -> str:
    if name.startswith("scene."):
        return "scene"
    return name


class _Section:
    def __init__(self, name, items):
        self.name = name
        self.items = dict(items)
        self.used = set()

    def get(self, key, conv, default):
        if key not in self.items:
            return default
        self.used.add(key)
        raw = self.items[key]
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{self.name}] {key} = {raw!r}: {exc}") from None

    def rest(self, exclude=()):
        """Remaining keys as floats (corruption parameters)."""
        out = {}
        for key, raw in self.items.items():
            if key in exclude:
                continue
            self.used.add(key)
            try:
                out[key] = float(raw)
            except ValueError:
                raise ConfigError(f"[{self.name}] {key} = {raw!r} is not a number") from None
        return out


def _as_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _as_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _as_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in _as_list(text))


def _as_scales(text: str) -> dict[str, tuple[int, int]]:
    """``"car 14-30, bus 20-36"`` to ``{"car": (14, 30), "bus": (20, 36)}``."""
    out = {}
    for item in _as_list(text):
        name, _, rng = item.partition(" ")
        lo, sep, hi = rng.strip().partition("-")
        if not sep:
            raise ValueError(f"scale {item!r} must look like 'name min-max'")
        out[name.strip()] = (int(lo), int(hi))
    return out


def _scene(sec: _Section | None, seed: int, name: str, default_palette: str) -> SceneSpec:
    sec = sec or _Section(name, {})
    class_set = ClassSet(sec.get("classes", _as_list, DEFAULT_CLASSES))
    scales = sec.get("scales", _as_scales, {})
    unknown = set(scales) - set(class_set)
    if unknown:
        raise ConfigError(f"[{name}] scales given for unknown classes {sorted(unknown)}")
    return SceneSpec(
        image_size=sec.get("image_size", int, 64),
        objects_per_image=(sec.get("objects_min", int, 1), sec.get("objects_max", int, 3)),
        class_set=class_set,
        class_weights=sec.get("class_weights", _as_ints, (1,) * len(class_set)),
        scales=tuple(scales.get(c, DEFAULT_SCALES.get(c, (8, 8))) for c in class_set),
        palette=sec.get("palette", str.strip, default_palette),
        seed=sec.get("seed", int, derive_seed(seed, name)),
    )


def _corruption(sections, name: str, seed: int, default: CorruptionSpec) -> CorruptionSpec:
    sec = sections.get(name)
    if sec is None:
        return replace(default, seed=derive_seed(seed, name))
    kind = sec.get("kind", str.strip, default.kind)
    if kind not in KINDS:
        raise ConfigError(f"[{name}] unknown corruption kind {kind!r}")
    spec_seed = sec.get("seed", int, derive_seed(seed, name))
    if kind != "composite":
        return CorruptionSpec(kind, sec.rest(exclude={"kind", "seed"}), spec_seed)
    part_names = sec.get("parts", _as_list, ())
    if not part_names:
        raise ConfigError(f"[{name}] composite corruption needs 'parts'")
    parts = []
    for part in part_names:
        psec = sections.get(f"{name}.{part}") or _Section(f"{name}.{part}", {})
        pkind = psec.get("kind", str.strip, part)
        if pkind not in KINDS or pkind == "composite":
            raise ConfigError(f"[{name}.{part}] invalid part kind {pkind!r}")
        parts.append(CorruptionSpec(pkind, psec.rest(exclude={"kind"})))
    return CorruptionSpec("composite", seed=spec_seed, parts=tuple(parts))


def _train(sec: _Section | None) -> TrainConfig:
    sec = sec or _Section("train", {})
    d = TrainConfig()
    return TrainConfig(
        learning_rate=sec.get("learning_rate", float, d.learning_rate),
        batch_size=sec.get("batch_size", int, d.batch_size),
        steps=sec.get("steps", int, d.steps),
        alpha=sec.get("alpha", float, d.alpha),
        neg_ratio=sec.get("neg_ratio", float, d.neg_ratio),
        momentum=sec.get("momentum", float, d.momentum),
        lr_steps=sec.get("lr_steps", _as_ints, d.lr_steps),
        lr_gamma=sec.get("lr_gamma", float, d.lr_gamma),
    )


def _finetune(sec: _Section | None, base: TrainConfig) -> TrainConfig:
    sec = sec or _Section("finetune", {})
    steps = sec.get("steps", int, base.steps)
    return replace(
        base,
        learning_rate=sec.get("learning_rate", float, base.learning_rate / 10.0),
        steps=steps,
        momentum=sec.get("momentum", float, base.momentum),
        lr_steps=sec.get("lr_steps", _as_ints, tuple(s for s in base.lr_steps if s < steps)),
        lr_gamma=sec.get("lr_gamma", float, base.lr_gamma),
    )


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse ``wbh-config v1`` text. ``overrides`` maps ``"section.key"``
    to a raw value and is applied before validation (CLI flags)."""
    lines = text.splitlines()
    first = next((i for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith(("#", ";"))), None)
    if first is None or lines[first].strip() != HEADER:
        raise ConfigError(f"config must start with the header line {HEADER!r}")
    body = "\n".join(lines[first + 1:])
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(body)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        if not section:
            raise ConfigError(f"override {dotted!r} needs the form section.key")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))

    sections = {name: _Section(name, cp.items(name)) for name in cp.sections()}
    for name in sections:
        kind = _section_kind(name)
        if kind in _KNOWN or name in ("scene.a", "scene.b"):
            continue
        if name.startswith(("corruption.target", "corruption.train")):
            continue
        raise ConfigError(f"unknown section [{name}]")

    exp = sections.get("experiment") or _Section("experiment", {})
    seed = exp.get("seed", int, 0)
    train = _train(sections.get("train"))
    d = ExperimentConfig()
    cfg = ExperimentConfig(
        seed=seed,
        stages=exp.get("stages", _as_list, STAGES),
        out=exp.get("out", str.strip, d.out),
        n_train=exp.get("n_train", int, d.n_train),
        n_test=exp.get("n_test", int, d.n_test),
        mix_fraction=exp.get("mix_fraction", float, d.mix_fraction),
        cache=exp.get("cache", _as_bool, True),
        scene_a=_scene(sections.get("scene.a"), seed, "scene.a", "voc"),
        scene_b=_scene(sections.get("scene.b"), seed, "scene.b", "coco"),
        train=train,
        finetune=_finetune(sections.get("finetune"), train),
        target=_corruption(sections, "corruption.target", seed, d.target),
        train_corruption=_corruption(sections, "corruption.train", seed, d.train_corruption),
        eval=_eval(sections.get("eval")),
        bounds=_bounds(sections.get("bounds")),
    )
    for name, sec in sections.items():
        kind = _section_kind(name)
        allowed = _KNOWN.get(kind, sec.used)
        extra = set(sec.items) - allowed
        if extra:
            raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(extra))}")
    return cfg


def _eval(sec: _Section | None) -> EvalConfig:
    sec = sec or _Section("eval", {})
    d = EvalConfig()
    return EvalConfig(sec.get("iou_thresh", float, d.iou_thresh), sec.get("method", str.strip, d.method),
                      sec.get("conf_threshold", float, d.conf_threshold), sec.get("nms_iou", float, d.nms_iou))


def _bounds(sec: _Section | None) -> Bounds:
    sec = sec or _Section("bounds", {})
    d = Bounds()
    return Bounds(sec.get("stage1_min_map", float, d.stage1_min_map),
                  sec.get("stage2_max_fraction", float, d.stage2_max_fraction),
                  sec.get("tech2_min_ratio", float, d.tech2_min_ratio))


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


def default_config_text() -> str:
    return resources.files("weatherbias.configs").joinpath("default.wbh").read_text(encoding="utf-8")


def default_config(overrides: dict[str, str] | None = None) -> ExperimentConfig:
    return parse_config(default_config_text(), overrides)


def describe_config(cfg: ExperimentConfig) -> str:
    """Canonical text of everything that influences results (``out`` and
    ``cache`` excluded)."""
    return "\n".join([
        f"seed={cfg.seed}", f"stages={','.join(cfg.ordered_stages())}",
        f"n_train={cfg.n_train}", f"n_test={cfg.n_test}", f"mix={cfg.mix_fraction!r}",
        cfg.scene_a.describe(), cfg.scene_b.describe(), cfg.train.describe(), cfg.finetune.describe(),
        cfg.target.describe(), cfg.train_corruption.describe(), repr(cfg.eval), repr(cfg.bounds),
        repr(cfg.arch.descriptor()),
    ])


def resolve_out(cfg: ExperimentConfig, base: str | None = None) -> str:
    return cfg.out if os.path.isabs(cfg.out) or base is None else os.path.join(base, cfg.out)
