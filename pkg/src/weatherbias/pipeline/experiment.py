"""End-to-end experiment: run the requested stages and write every output.

Run directory layout::

    cache/            content-addressed datasets and checkpoints
    reports/<stage>.json
    checkpoints/<stage>.wbh
    reads/<stage>.txt  images read while training each stage's model
    table1.md/.csv    clean vs. adverse condition (both families)
    table2.md/.csv    mitigation techniques against the stage-2 baseline
    summary.json      bias gaps, ratios, deltas and bound checks
    hygiene.txt       split violations (empty when there are none)
    config.txt        canonical description of the configuration
    timings.json      wall-clock seconds per stage (not deterministic)
    artifacts.txt     path, size and digest of every deterministic output
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import time
from dataclasses import dataclass, field

from ..errors import StageError, WeatherBiasError
from ..evaluation import EvalReport, render_report_table
from .config import ExperimentConfig, describe_config
from .stages import (StageResult, Workspace, run_stage1, run_stage2, run_stage3, run_stage4, run_technique1,
                     run_technique2, split_hygiene, tech2_read_violations)
from .store import file_digest
from .summary import BiasSummary, summarize

log = logging.getLogger(__name__)

TABLE1 = ("stage1", "stage2", "stage3", "stage4.clean", "stage4.target", "stage4.mix")
TABLE2 = ("stage2", "tech1", "tech2")
TIMINGS = "timings.json"
ARTIFACTS = "artifacts.txt"


@dataclass
class ExperimentOutcome:
    out: str
    results: dict[str, StageResult]
    summary: BiasSummary
    tables: dict[str, str] = field(default_factory=dict)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and self.summary.passed


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _tables(reports: dict[str, EvalReport], class_names) -> dict[str, str]:
    out = {}
    for name, order in (("table1", TABLE1), ("table2", TABLE2)):
        rows = [reports[k] for k in order if k in reports]
        out[f"{name}.md"] = render_report_table(rows, "markdown", class_names)
        out[f"{name}.csv"] = render_report_table(rows, "csv", class_names)
    return out


def _hygiene(ws: Workspace, results) -> list[str]:
    problems = split_hygiene(ws)
    if "tech2" in results:
        handle = ws.model("a", ws.blurred_train("a"), ws.cfg.train)
        problems += [f"technique 2 read {p}" for p in tech2_read_violations(ws, handle, ws.blurred_train("a"))]
        target_dirs = {ws.target("a", s).id for s in ("train", "test")}
        touched = [p for p in handle.reads() if p.split("/", 1)[0] in target_dirs]
        problems += [f"technique 2 read a target-condition image {p}" for p in touched]
    return problems


def _copy_stage_files(ws: Workspace, results):
    for stage, r in results.items():
        src = os.path.join(ws.out, r.checkpoint)
        shutil.copyfile(src, os.path.join(ws.out, "checkpoints", f"{stage}.wbh"))
        reads = os.path.join(os.path.dirname(src), "reads.txt")
        if os.path.exists(reads):
            shutil.copyfile(reads, os.path.join(ws.out, "reads", f"{stage}.txt"))


def write_artifact_manifest(out: str) -> str:
    """List every deterministic file under ``out`` with size and digest.

    Cached images are covered through their dataset manifests, so only
    manifests, checkpoints and top-level outputs are listed.
    """
    lines = []
    for dirpath, dirnames, filenames in os.walk(out):
        dirnames.sort()
        rel_dir = os.path.relpath(dirpath, out)
        if rel_dir.split(os.sep)[-1] == "images":
            continue
        for name in sorted(filenames):
            rel = os.path.normpath(os.path.join(rel_dir, name)).replace(os.sep, "/")
            if rel in (TIMINGS, ARTIFACTS) or name.endswith(".partial"):
                continue
            path = os.path.join(dirpath, name)
            lines.append(f"{rel}\t{os.path.getsize(path)}\t{file_digest(path)}")
    text = "".join(ln + "\n" for ln in sorted(lines))
    _write(os.path.join(out, ARTIFACTS), text)
    return text


def run_experiment(cfg: ExperimentConfig, out_dir=None, reuse: bool | None = None) -> ExperimentOutcome:
    """Run ``cfg``'s stages (plus dependencies) in order and write the run
    directory. A failing stage stops the run after the outputs of every
    completed stage have been written; :class:`StageError` is then raised."""
    out = os.fspath(out_dir if out_dir is not None else cfg.out)
    for sub in ("reports", "checkpoints", "reads"):
        path = os.path.join(out, sub)
        if os.path.exists(path):
            shutil.rmtree(path)
        os.makedirs(path)
    ws = Workspace(cfg, out, reuse)
    _write(os.path.join(out, "config.txt"), describe_config(cfg) + "\n")

    results: dict[str, StageResult] = {}
    error = None
    runners = {
        "stage1": lambda: [run_stage1(ws)],
        "stage2": lambda: [run_stage2(ws, results.get("stage1"))],
        "stage3": lambda: [run_stage3(ws)],
        "stage4": lambda: run_stage4(ws),
        "tech1": lambda: [run_technique1(ws, results.get("stage1"))],
        "tech2": lambda: [run_technique2(ws)],
    }
    for stage in cfg.ordered_stages():
        log.info("running %s", stage)
        t0 = time.perf_counter()
        try:
            for r in runners[stage]():
                results[r.stage] = r
                _write(os.path.join(out, "reports", f"{r.stage}.json"), r.report.to_json())
        except WeatherBiasError as exc:
            error = f"{stage} failed: {exc}"
            log.error(error)
            break
        log.info("%s done in %.1fs", stage, time.perf_counter() - t0)

    reports = {k: r.report for k, r in results.items()}
    problems = _hygiene(ws, results) if error is None else split_hygiene(ws)
    _write(os.path.join(out, "hygiene.txt"), "".join(p + "\n" for p in problems))
    summary = summarize(reports, cfg.bounds, problems)
    _copy_stage_files(ws, results)
    tables = _tables(reports, cfg.scene_a.class_set.names)
    for name, text in tables.items():
        _write(os.path.join(out, name), text)
    summary_doc = summary.to_dict()
    summary_doc["stages"] = {k: {kk: vv for kk, vv in r.to_dict().items() if kk != "report"}
                             for k, r in sorted(results.items())}
    summary_doc["error"] = error
    _write(os.path.join(out, "summary.json"), json.dumps(summary_doc, indent=2, sort_keys=True) + "\n")
    timings = {k: round(r.seconds, 3) for k, r in sorted(results.items())}
    timings["cache_hits"] = list(ws.store.hits)
    _write(os.path.join(out, TIMINGS), json.dumps(timings, indent=2, sort_keys=True) + "\n")
    write_artifact_manifest(out)

    outcome = ExperimentOutcome(out, results, summary, tables, error)
    if error is not None:
        raise StageError(error, outcome=outcome)
    return outcome


def load_reports(out: str) -> dict[str, EvalReport]:
    reports = {}
    folder = os.path.join(out, "reports")
    for name in sorted(os.listdir(folder)):
        if name.endswith(".json"):
            with open(os.path.join(folder, name), encoding="utf-8") as fh:
                reports[name[:-5]] = EvalReport.from_dict(json.load(fh))
    return reports


def recompute_summary(out: str, cfg: ExperimentConfig) -> BiasSummary:
    """Summary rebuilt from the stored reports of a finished run."""
    with open(os.path.join(out, "hygiene.txt"), encoding="utf-8") as fh:
        problems = [ln.rstrip("\n") for ln in fh if ln.strip()]
    return summarize(load_reports(out), cfg.bounds, problems)
