"""Datasets, models and the individual stages of the bias experiment.

Family ``a`` is the primary clean scene family, family ``b`` the second one
used for the cross-dataset check. Every model trained from scratch within a
family starts from the same initialization and batch order, so stages
differ only in the images they train on.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..data import DatasetManifest, mix_datasets, read_manifest, write_manifest
from ..detector.checkpoint import load_model, save_model
from ..detector.network import ModelState, init_model
from ..detector.training import TrainConfig, load_images, train
from ..errors import StageError
from ..evaluation import EvalReport, evaluate
from ..imaging import CorruptionSpec, corrupt_dataset
from ..scenegen import generate_dataset
from .config import ExperimentConfig
from .store import ArtifactStore

log = logging.getLogger(__name__)

FAMILY_NAMES = {"a": "A", "b": "B"}


@dataclass(frozen=True)
class DatasetHandle:
    key: str  # canonical description of how the set was built
    path: str
    manifest: DatasetManifest = field(repr=False)
    family: str
    split: str  # "train" or "test"
    parent: "DatasetHandle | None" = field(default=None, repr=False)

    @property
    def id(self) -> str:
        return os.path.basename(self.path)


@dataclass(frozen=True)
class ModelHandle:
    key: str
    path: str
    model: ModelState = field(repr=False)

    @property
    def id(self) -> str:
        return os.path.basename(self.path)

    @property
    def checkpoint(self) -> str:
        return os.path.join(self.path, "model.wbh")

    def reads(self) -> list[str]:
        """Images read while training this model, relative to the store root."""
        with open(os.path.join(self.path, "reads.txt"), encoding="utf-8") as fh:
            return [ln.rstrip("\n") for ln in fh if ln.strip()]


@dataclass
class StageResult:
    stage: str
    train_set: str
    test_set: str
    report: EvalReport
    checkpoint: str  # relative to the output directory
    seconds: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {"stage": self.stage, "train_set": self.train_set, "test_set": self.test_set,
                "checkpoint": self.checkpoint, "report": self.report.to_dict()}


class Workspace:
    """Lazily built datasets and models for one experiment configuration."""

    def __init__(self, cfg: ExperimentConfig, out_dir, reuse: bool | None = None):
        self.cfg = cfg
        self.out = os.fspath(out_dir)
        self.store = ArtifactStore(os.path.join(self.out, "cache"), cfg.cache if reuse is None else reuse)
        self._data: dict[str, DatasetHandle] = {}
        self._models: dict[str, ModelHandle] = {}
        self._images: dict[str, np.ndarray] = {}

    def rel(self, path: str) -> str:
        return os.path.relpath(path, self.out).replace(os.sep, "/")

    # -- datasets ----------------------------------------------------------

    def scene(self, family: str):
        return self.cfg.scene_a if family == "a" else self.cfg.scene_b

    def _dataset(self, key, family, split, parent, builder) -> DatasetHandle:
        if key not in self._data:
            path = self.store.build("data", key, builder)
            m = read_manifest(os.path.join(path, "manifest.txt"))
            self._data[key] = DatasetHandle(key, path, m, family, split, parent)
        return self._data[key]

    def clean(self, family: str, split: str) -> DatasetHandle:
        spec = self.scene(family)
        start, n = (0, self.cfg.n_train) if split == "train" else (self.cfg.n_train, self.cfg.n_test)
        key = f"clean|{spec.describe()}|start={start}|n={n}"
        return self._dataset(key, family, split, None,
                             lambda tmp: generate_dataset(spec, n, tmp, start=start))

    def corrupted(self, parent: DatasetHandle, spec: CorruptionSpec) -> DatasetHandle:
        key = f"corrupt|{parent.key}|{spec.describe()}"
        return self._dataset(key, parent.family, parent.split, parent,
                             lambda tmp: corrupt_dataset(parent.manifest, spec, tmp))

    def target(self, family: str, split: str) -> DatasetHandle:
        return self.corrupted(self.clean(family, split), self.cfg.target)

    def blurred_train(self, family: str = "a") -> DatasetHandle:
        return self.corrupted(self.clean(family, "train"), self.cfg.train_corruption)

    def mixed_train(self, family: str = "a") -> DatasetHandle:
        clean, bad = self.clean(family, "train"), self.target(family, "train")
        frac, seed = self.cfg.mix_fraction, self.cfg.mix_seed()
        key = f"mix|{clean.key}|{bad.key}|fraction={frac!r}|seed={seed}"

        def build(tmp):
            m = mix_datasets(clean.manifest, bad.manifest, frac, seed)
            # store paths relative to the new directory so it resolves on its own
            recs = [replace(r, image_path=os.path.relpath(m.resolve(r), tmp).replace(os.sep, "/"))
                    for r in m.records]
            write_manifest(DatasetManifest(recs, m.class_set, m.provenance, tmp),
                           os.path.join(tmp, "manifest.txt"))

        return self._dataset(key, family, "train", clean, build)

    def images(self, data: DatasetHandle) -> np.ndarray:
        if data.key not in self._images:
            self._images[data.key] = load_images(data.manifest)
        return self._images[data.key]

    # -- models ------------------------------------------------------------

    def model(self, family: str, data: DatasetHandle, tcfg: TrainConfig,
              start: ModelHandle | None = None) -> ModelHandle:
        """Train (or reuse) a model on ``data``; from scratch unless ``start``."""
        cfg = self.cfg
        tcfg = replace(tcfg, seed=cfg.shuffle_seed(family))
        origin = f"from={start.key}" if start else f"init={cfg.model_seed(family)}"
        key = (f"model|{sorted(cfg.arch.descriptor().items())}|{','.join(self.scene(family).class_set)}|"
               f"{origin}|{tcfg.describe()}|data={data.key}")
        if key in self._models:
            return self._models[key]

        def build(tmp):
            base = start.model if start else init_model(cfg.arch, self.scene(family).class_set,
                                                        cfg.model_seed(family))
            reads: list[str] = []
            trained = train(base, data.manifest, tcfg, reads=reads)
            save_model(trained, os.path.join(tmp, "model.wbh"))
            root = os.path.abspath(self.store.root)
            with open(os.path.join(tmp, "reads.txt"), "w", encoding="utf-8", newline="\n") as fh:
                for p in reads:
                    fh.write(os.path.relpath(os.path.abspath(p), root).replace(os.sep, "/") + "\n")
            with open(os.path.join(tmp, "loss.txt"), "w", encoding="utf-8", newline="\n") as fh:
                fh.writelines(f"{v!r}\n" for v in trained.loss_trace[len(base.loss_trace):])

        path = self.store.build("model", key, build)
        handle = ModelHandle(key, path, load_model(os.path.join(path, "model.wbh"), cfg.arch))
        self._models[key] = handle
        return handle

    def evaluate(self, handle: ModelHandle, train_set: DatasetHandle, test: DatasetHandle,
                 label: str) -> EvalReport:
        """Report whose provenance names the model, its training set and the test set."""
        e = self.cfg.eval
        return evaluate(handle.model, test.manifest, e.iou_thresh, e.method, e.conf_threshold, e.nms_iou,
                        label=label, model_id=f"{handle.id}@{train_set.id}", dataset_id=test.id,
                        images=self.images(test))

    def result(self, stage, handle, train_set, test_set, label, t0) -> StageResult:
        report = self.evaluate(handle, train_set, test_set, label)
        return StageResult(stage, train_set.id, test_set.id, report, self.rel(handle.checkpoint),
                           time.perf_counter() - t0)


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------

def stage1_model(ws: Workspace, family: str = "a") -> ModelHandle:
    return ws.model(family, ws.clean(family, "train"), ws.cfg.train)


def run_stage1(ws: Workspace, family: str = "a") -> StageResult:
    """Train on clean images, test on clean images."""
    t0 = time.perf_counter()
    handle = stage1_model(ws, family)
    name = FAMILY_NAMES[family]
    stage = "stage1" if family == "a" else "stage4.clean"
    label = f"Stage 1 [{name} clean]" if family == "a" else f"Stage 4 [{name} clean]"
    return ws.result(stage, handle, ws.clean(family, "train"), ws.clean(family, "test"), label, t0)


def _require(stage1: StageResult | None, ws: Workspace, what: str):
    if stage1 is None or not os.path.exists(os.path.join(ws.out, stage1.checkpoint)):
        raise StageError(f"{what} needs a stage-1 checkpoint; run stage1 first")


def run_stage2(ws: Workspace, stage1: StageResult | None, family: str = "a") -> StageResult:
    """The clean-trained model tested on the adverse-condition test split."""
    _require(stage1, ws, "stage2")
    t0 = time.perf_counter()
    handle = stage1_model(ws, family)
    name = FAMILY_NAMES[family]
    stage = "stage2" if family == "a" else "stage4.target"
    label = f"Stage 2 [{name} target]" if family == "a" else f"Stage 4 [{name} target]"
    return ws.result(stage, handle, ws.clean(family, "train"), ws.target(family, "test"), label, t0)


def run_stage3(ws: Workspace, family: str = "a") -> StageResult:
    """Fresh model trained on clean images plus a small share of corrupted ones."""
    t0 = time.perf_counter()
    data = ws.mixed_train(family)
    handle = ws.model(family, data, ws.cfg.train)
    pct = f"{100 * ws.cfg.mix_fraction:g}"
    name = FAMILY_NAMES[family]
    stage = "stage3" if family == "a" else "stage4.mix"
    label = f"Stage 3 [{name} mix {pct}%]" if family == "a" else f"Stage 4 [{name} mix {pct}%]"
    return ws.result(stage, handle, data, ws.target(family, "test"), label, t0)


def run_stage4(ws: Workspace) -> list[StageResult]:
    """Stages 1 to 3 repeated on the second scene family."""
    clean = run_stage1(ws, "b")
    return [clean, run_stage2(ws, clean, "b"), run_stage3(ws, "b")]


def run_technique1(ws: Workspace, stage1: StageResult | None) -> StageResult:
    """Fine-tune the stage-1 model on the corrupted training split."""
    _require(stage1, ws, "tech1")
    t0 = time.perf_counter()
    data = ws.target("a", "train")
    handle = ws.model("a", data, ws.cfg.finetune, start=stage1_model(ws, "a"))
    return ws.result("tech1", handle, data, ws.target("a", "test"), "Technique 1: fine-tuning", t0)


def run_technique2(ws: Workspace) -> StageResult:
    """Fresh model trained only on blur-corrupted clean images, tested on the
    adverse-condition split it never saw."""
    t0 = time.perf_counter()
    data = ws.blurred_train("a")
    handle = ws.model("a", data, ws.cfg.train)
    violations = tech2_read_violations(ws, handle, data)
    if violations:
        raise StageError(f"technique-2 training read {len(violations)} images outside its training set, "
                         f"e.g. {violations[0]}")
    return ws.result("tech2", handle, data, ws.target("a", "test"), "Technique 2: double Gaussian training", t0)


# --------------------------------------------------------------------------
# Split hygiene
# --------------------------------------------------------------------------

def tech2_read_violations(ws: Workspace, handle: ModelHandle, data: DatasetHandle) -> list[str]:
    """Images read during technique-2 training that are not in its training set."""
    root = os.path.abspath(ws.store.root)
    allowed = {os.path.relpath(os.path.abspath(data.manifest.resolve(r)), root).replace(os.sep, "/")
               for r in data.manifest.records}
    return [p for p in handle.reads() if p not in allowed]


def _source_images(d: DatasetHandle) -> set[str]:
    """Scene identities in ``d``: corrupted and mixed sets keep the file name
    of the clean image each record came from."""
    return {os.path.basename(r.image_path) for r in d.manifest.records}


def split_hygiene(ws: Workspace) -> list[str]:
    """Problems with the train/test separation of every dataset built so far."""
    problems = []
    train_ids: set[str] = set()
    test_ids: set[str] = set()
    for d in ws._data.values():
        (train_ids if d.split == "train" else test_ids).update(
            f"{d.family}:{name}" for name in _source_images(d))
        if d.parent is not None and d.key.startswith("corrupt|"):
            if [r.image_path for r in d.manifest.records] != [r.image_path for r in d.parent.manifest.records]:
                problems.append(f"{d.id} does not mirror its source {d.parent.id}")
            if d.split != d.parent.split:
                problems.append(f"{d.id} changes split relative to {d.parent.id}")
    shared = sorted(train_ids & test_ids)
    if shared:
        problems.append(f"{len(shared)} images appear in both train and test splits, e.g. {shared[0]}")
    return problems
