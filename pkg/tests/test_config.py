import json

import pytest

from kinface.config import RunConfig, dump_config, load_config, parse_override
from kinface.errors import ConfigError, ImageIOError


def test_defaults():
    cfg = load_config()
    assert cfg.train.batch_size == 16 and cfg.train.lr == 1e-5 and cfg.train.epochs == 200
    assert cfg.augment.mode == "none" and cfg.train.loss_space == "latent"


def test_file_overrides_and_flags(tmp_path):
    (tmp_path / "c.yaml").write_text("seed: 3\ntrain:\n  lr: 0.001\n  epochs: 5\n")
    cfg = load_config(tmp_path / "c.yaml", ["train.epochs=7"], seed=9, out_dir=None)
    assert cfg.seed == 9 and cfg.train.lr == 1e-3 and cfg.train.epochs == 7
    (tmp_path / "c.json").write_text(json.dumps({"augment": {"mode": "mixup"}}))
    assert load_config(tmp_path / "c.json").augment.mode == "mixup"


@pytest.mark.parametrize("text, expected", [("a.b=1", ("a.b", 1)), ("x=true", ("x", True)),
                                            ("w=[0.5, 1]", ("w", [0.5, 1])),
                                            ("s=abc", ("s", "abc"))])
def test_parse_override(text, expected):
    assert parse_override(text) == expected


@pytest.mark.parametrize("overrides", [["train.nope=1"], ["train.lr=-1"], ["bogus"],
                                       ["augment.mode=cutmix"], ["seed.x=1"]])
def test_bad_config(overrides):
    with pytest.raises(ConfigError):
        load_config(overrides=overrides)


def test_unreadable_file(tmp_path):
    with pytest.raises(ImageIOError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")


def test_digest_tracks_model_meaning():
    base = load_config().digest()
    assert load_config(overrides=["train.lr=1"]).digest() == base
    assert load_config(overrides=["augment.p_apply=1"]).digest() == base
    assert load_config(overrides=["codec.seed=2"]).digest() != base
    assert load_config(overrides=["train.use_segmentation=true"]).digest() != base
    assert len(base) == 16


def test_dump_round_trip(tmp_path):
    cfg = load_config(overrides=["train.lr=0.01", "augment.mixup_weights=[0.2, 0.3]"])
    dump_config(cfg, tmp_path / "cfg.json")
    assert RunConfig.model_validate(json.loads((tmp_path / "cfg.json").read_text())) == cfg
