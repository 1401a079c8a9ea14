import pytest

from weatherbias.errors import ConfigError
from weatherbias.pipeline import (STAGES, default_config, default_config_text, derive_seed, describe_config,
                                  load_config, parse_config)

HEAD = "wbh-config v1\n"


def test_default_config_values():
    cfg = default_config()
    assert cfg.stages == STAGES and cfg.n_train == 400 and cfg.n_test == 100
    assert cfg.mix_fraction == 0.10 and cfg.cache
    assert cfg.train.learning_rate == 0.01 and cfg.train.momentum == 0.9 and cfg.train.steps == 1000
    assert cfg.train.lr_steps == (700, 900) and cfg.train.batch_size == 16
    assert cfg.finetune.learning_rate == 0.001 and cfg.finetune.steps == 300
    assert cfg.target.kind == "composite" and [p.kind for p in cfg.target.parts] == ["fog", "rain"]
    assert cfg.train_corruption.kind == "double_gaussian"
    assert cfg.scene_a.palette == "voc" and cfg.scene_b.palette == "coco"
    assert cfg.eval.method == "11point" and cfg.eval.iou_thresh == 0.5
    assert (cfg.bounds.stage1_min_map, cfg.bounds.stage2_max_fraction, cfg.bounds.tech2_min_ratio) == (50, 0.5, 2)


def test_load_matches_parse(tmp_path):
    p = tmp_path / "c.wbh"
    p.write_text(default_config_text())
    assert load_config(p) == default_config()


def test_describe_is_stable_and_sensitive():
    a = describe_config(default_config())
    assert a == describe_config(default_config())
    assert a != describe_config(default_config({"train.steps": "999"}))


def test_minimal_config_uses_defaults():
    cfg = parse_config(HEAD)
    assert cfg.stages == STAGES and cfg.eval.method == "11point"


@pytest.mark.parametrize("text,needle", [
    ("", "header"),
    ("wbh-config v2\n", "header"),
    ("[experiment]\nseed = 1\n", "header"),
    (HEAD + "[nonsense]\n", "unknown section"),
    (HEAD + "[experiment]\ncolour = red\n", "unknown keys"),
    (HEAD + "[experiment]\nstages = stage1, stage9\n", "unknown stages"),
    (HEAD + "[experiment]\nn_train = lots\n", "n_train"),
    (HEAD + "[experiment]\nmix_fraction = 1.5\n", "mix_fraction"),
    (HEAD + "[scene.a]\nscales = truck 10-20\n", "unknown classes"),
    (HEAD + "[scene.a]\nscales = car 30-10\n", ""),
    (HEAD + "[scene.a]\nscales = car ten\n", ""),
    (HEAD + "[scene.b]\nimage_size = 96\n", "image size"),
    (HEAD + "[corruption.target]\nkind = snowstorm\n", "unknown corruption kind"),
    (HEAD + "[corruption.target]\nkind = composite\n", "parts"),
    (HEAD + "[train]\nmomentum = 1.0\n", "momentum"),
    (HEAD + "[eval]\nmethod = coco\n", "method"),
    (HEAD + "[experiment]\nseed\n", "malformed"),
])
def test_parser_errors(text, needle):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert needle in str(info.value)


def test_override_needs_dotted_key():
    with pytest.raises(ConfigError):
        default_config({"steps": "3"})


def test_override_applies():
    cfg = default_config({"experiment.seed": "7", "experiment.stages": "tech1", "train.steps": "5"})
    assert cfg.seed == 7 and cfg.stages == ("tech1",) and cfg.train.steps == 5


@pytest.mark.parametrize("stages,want", [
    (("stage2",), ("stage1", "stage2")),
    (("tech1",), ("stage1", "tech1")),
    (("tech2",), ("tech2",)),
    (("tech2", "stage3"), ("stage3", "tech2")),
    (("stage4",), ("stage4",)),
    (STAGES, STAGES),
])
def test_dependency_closure(stages, want):
    cfg = default_config({"experiment.stages": ", ".join(stages)})
    assert cfg.ordered_stages() == want


def test_derive_seed_is_independent_per_name():
    assert derive_seed(0, "model.a") == derive_seed(0, "model.a")
    assert derive_seed(0, "model.a") != derive_seed(0, "model.b")
    assert derive_seed(0, "model.a") != derive_seed(1, "model.a")
    assert 0 <= derive_seed(2**40, "x") < 2**63


def test_scene_seeds_are_derived_and_independent():
    base = default_config()
    moved = parse_config(default_config_text().replace("[scene.a]\n", "[scene.a]\nseed = 12345\n"))
    assert moved.scene_a.seed == 12345 and base.scene_a.seed != 12345
    assert moved.scene_b == base.scene_b
    assert moved.target == base.target and moved.train_corruption == base.train_corruption


def test_explicit_corruption_parameters():
    cfg = parse_config(HEAD + "[corruption.target]\nkind = fog\nt = 0.7\nairlight = 0.6\nseed = 4\n")
    assert cfg.target.kind == "fog" and cfg.target.params["t"] == 0.7 and cfg.target.seed == 4
