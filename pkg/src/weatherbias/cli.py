"""Command-line interface: ``weatherbias generate|corrupt|train|eval|run|report``.

Exit codes: 0 success (for ``run``/``report``: every configured bound
holds), 1 a bound failed, 2 invalid input or a failed stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys

from .data import read_manifest
from .errors import ConfigError, StageError, WeatherBiasError

log = logging.getLogger("weatherbias")

EXIT_OK, EXIT_BOUNDS, EXIT_ERROR = 0, 1, 2

_PART = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_corruption(text: str, seed: int = 0):
    """``"fog(t=0.5,airlight=0.45)+rain(count=25)"`` to a CorruptionSpec;
    several ``+``-joined parts give a composite."""
    from .imaging import CorruptionSpec

    parts = []
    for chunk in text.split("+"):
        m = _PART.match(chunk)
        if not m:
            raise ConfigError(f"cannot parse corruption {chunk!r}; expected kind(key=value,...)")
        params = {}
        for item in filter(None, (p.strip() for p in (m.group(2) or "").split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"corruption parameter {item!r} needs key=value")
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"corruption parameter {item!r} is not numeric") from None
        parts.append((m.group(1), params))
    if len(parts) == 1:
        kind, params = parts[0]
        return CorruptionSpec(kind, params, seed)
    return CorruptionSpec("composite", seed=seed, parts=tuple(CorruptionSpec(k, p) for k, p in parts))


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_generate(args) -> int:
    from .scenegen import SceneSpec, generate_dataset

    spec = SceneSpec(image_size=args.size, objects_per_image=(args.objects_min, args.objects_max),
                     palette=args.palette, seed=args.seed)
    m = generate_dataset(spec, args.n, args.out, start=args.start)
    print(f"wrote {len(m.records)} scenes to {args.out}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    from .imaging import corrupt_dataset

    spec = parse_corruption(args.spec, args.seed)
    m = corrupt_dataset(read_manifest(args.manifest), spec, args.out)
    print(f"wrote {len(m.records)} {spec.tag} images to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .detector import Architecture, TrainConfig, init_model, load_model, save_model, train
    from .detector.anchors import AnchorConfig

    data = read_manifest(args.manifest)
    size = data.records[0].image_size[0] if data.records else 64
    arch = Architecture(size, num_classes=len(data.class_set), anchors=AnchorConfig(grid=size // 8))
    model = load_model(args.init, arch) if args.init else init_model(arch, data.class_set, args.seed)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, steps=args.steps,
                      momentum=args.momentum, seed=args.seed,
                      lr_steps=tuple(int(s) for s in args.lr_steps.split(",") if s.strip()))
    trained = train(model, data, cfg)
    save_model(trained, args.out)
    trace = trained.loss_trace
    if trace:
        print(f"loss {trace[0]:.4f} -> {trace[-1]:.4f} after {len(trace)} steps; saved {args.out}")
    else:
        print(f"saved {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .detector import load_model
    from .evaluation import evaluate, read_detection_dump, render_report_table

    test = read_manifest(args.manifest)
    source = load_model(args.model) if args.model else read_detection_dump(args.detections)
    report = evaluate(source, test, args.iou, args.method, label=args.label,
                      model_id=os.path.basename(args.model or args.detections),
                      dataset_id=os.path.basename(os.path.dirname(os.path.abspath(args.manifest))))
    print(render_report_table([report], args.format), end="")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.json:
        with open(args.json, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_json())
    return EXIT_OK


def _print_checks(summary) -> None:
    for c in summary.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")


def cmd_run(args) -> int:
    from .pipeline import default_config_text, load_config, parse_config, run_experiment

    overrides = {}
    if args.seed is not None:
        overrides["experiment.seed"] = str(args.seed)
    if args.stages:
        overrides["experiment.stages"] = args.stages
    if args.out:
        overrides["experiment.out"] = args.out
    if args.no_cache:
        overrides["experiment.cache"] = "false"
    cfg = load_config(args.config, overrides) if args.config else parse_config(default_config_text(), overrides)
    try:
        outcome = run_experiment(cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.outcome is not None:
            _print_checks(exc.outcome.summary)
        return EXIT_ERROR
    print(outcome.tables["table1.md"])
    print(outcome.tables["table2.md"])
    _print_checks(outcome.summary)
    print(f"outputs in {outcome.out}")
    return EXIT_OK if outcome.passed else EXIT_BOUNDS


def cmd_report(args) -> int:
    from .evaluation import render_report_table
    from .pipeline import load_reports
    from .pipeline.experiment import TABLE1, TABLE2

    reports = load_reports(args.run)
    for order in (TABLE1, TABLE2):
        rows = [reports[k] for k in order if k in reports]
        if rows:
            print(render_report_table(rows, args.format), end="")
            print()
    with open(os.path.join(args.run, "summary.json"), encoding="utf-8") as fh:
        summary = json.load(fh)
    for c in summary["checks"]:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c['detail']}")
    return EXIT_OK if summary["passed"] and not summary.get("error") else EXIT_BOUNDS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weatherbias", description="Good-weather bias benchmark for a "
                                "small single-shot detector.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a procedural scene dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--start", type=int, default=0, help="index of the first scene")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--palette", choices=("voc", "coco"), default="voc")
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--objects-min", type=int, default=1)
    g.add_argument("--objects-max", type=int, default=3)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("corrupt", help="apply a synthetic corruption to a dataset")
    c.add_argument("--manifest", required=True)
    c.add_argument("--spec", required=True, help='e.g. "double_gaussian" or "fog(airlight=0.45)+rain(count=25)"')
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corrupt)

    t = sub.add_parser("train", help="train a detector (or fine-tune one with --init)")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--init", help="checkpoint to start from")
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr-steps", default="700,900", help="comma-separated steps where the rate drops 10x")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-class AP and mAP of a model or detection dump")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--detections", help="tab-separated detection dump")
    e.add_argument("--manifest", required=True)
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--method", choices=("11point", "allpoint"), default="11point")
    e.add_argument("--label", default="model")
    e.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    e.add_argument("--json", help="also write the report as JSON")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", help="run the full experiment from a config")
    r.add_argument("--config", help="wbh-config v1 file (default: the shipped default config)")
    r.add_argument("--seed", type=int)
    r.add_argument("--stages", help="comma-separated subset of stage1,stage2,stage3,stage4,tech1,tech2")
    r.add_argument("--out")
    r.add_argument("--no-cache", action="store_true", help="rebuild every dataset and model")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="print the tables and checks of a finished run")
    rep.add_argument("run", help="run directory")
    rep.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (WeatherBiasError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
