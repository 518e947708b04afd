import json

import numpy as np
import pytest

from kinface import imaging, pipeline
from kinface.config import load_config
from kinface.errors import (
    ConfigError, DigestMismatchError, ImageIOError, ManifestError, NumericError,
)
from kinface.numerics import MlpParams, seeded_rng
from kinface.pipeline import (
    FamilyImages, concat_parents, load_manifest, predict, preprocess_family, train,
)


def _write(tmp_path, rows):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"families": rows}))
    return path


def _family_files(tmp_path, fid):
    img = np.full((4, 4, 3), 100.0)
    row = {"family_id": fid}
    for role in ("father", "mother", "child"):
        imaging.save_image(img, tmp_path / f"{fid}_{role}.png")
        row[role] = f"{fid}_{role}.png"
    return row


def test_manifest_missing(tmp_path):
    with pytest.raises(ImageIOError):
        load_manifest(tmp_path / "none.json")


def test_manifest_empty(tmp_path):
    with pytest.raises(ManifestError, match="empty"):
        load_manifest(_write(tmp_path, []))


def test_manifest_duplicate_id(tmp_path):
    row = _family_files(tmp_path, "A")
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(_write(tmp_path, [row, dict(row)]))


def test_manifest_missing_field(tmp_path):
    row = _family_files(tmp_path, "A")
    del row["mother"]
    with pytest.raises(ManifestError, match="mother"):
        load_manifest(_write(tmp_path, [row]))


def test_manifest_dangling_path(tmp_path):
    row = _family_files(tmp_path, "A")
    row["child"] = "gone.png"
    with pytest.raises(ImageIOError, match="family A.*gone.png"):
        load_manifest(_write(tmp_path, [row]))


def test_manifest_not_json(tmp_path):
    (tmp_path / "m.json").write_text("{oops")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.json")


def test_seeded_split_ten_families(tmp_path):
    rows = [_family_files(tmp_path, f"F{k}") for k in range(10)]
    m = load_manifest(_write(tmp_path, rows), seed=0, train_fraction=0.8)
    assert len(m.split("train")) == 8 and len(m.split("val")) == 2
    again = load_manifest(tmp_path / "manifest.json", seed=0)
    assert again.splits == m.splits
    other = [load_manifest(tmp_path / "manifest.json", seed=s).splits for s in range(1, 6)]
    assert any(o != m.splits for o in other)


def test_explicit_splits(tmp_path):
    rows = [_family_files(tmp_path, f"F{k}") for k in range(3)]
    for row, split in zip(rows, ["val", "train", "val"]):
        row["split"] = split
    m = load_manifest(_write(tmp_path, rows))
    assert [f.family_id for f in m.split("train")] == ["F1"]


def test_manifest_round_trip(small_dataset, tmp_path):
    m = load_manifest(small_dataset)
    pipeline.write_manifest(m, tmp_path / "copy" / "manifest.json")
    # Paths are rewritten relative to the new location.
    back = load_manifest(tmp_path / "copy" / "manifest.json")
    assert back.splits == m.splits
    assert back.families[0].father.resolve() == m.families[0].father.resolve()


def test_preprocess_matches_direct_embedding(small_dataset, codec):
    m = load_manifest(small_dataset)
    cfg = load_config()
    fam = m.families[0]
    g_f, g_m, g_c = preprocess_family(fam, cfg, codec, seeded_rng(0))
    assert np.array_equal(g_f, codec.embed(imaging.load_image(fam.father)))
    assert np.array_equal(g_c, codec.embed(imaging.load_image(fam.child)))
    # The child is the pixel average up to 8-bit rounding; the embedding is an
    # isometry, so the latent gap is bounded by the rounding error.
    gap = np.linalg.norm(g_c - 0.5 * (g_f + g_m))
    assert gap <= 0.5 / 127.5 * np.sqrt(3072) + 1e-9


def test_segmentation_switch(small_dataset, codec, tmp_path):
    m = load_manifest(small_dataset)
    fam = m.families[0]
    plain = preprocess_family(fam, load_config(), codec, seeded_rng(0))
    seg_cfg = load_config(overrides=["train.use_segmentation=true"])
    seg = preprocess_family(fam, seg_cfg, codec, seeded_rng(0))
    assert not np.allclose(plain[0], seg[0])
    expected = codec.embed(imaging.colorize_labels(imaging.load_labelmap(fam.father_labels)))
    assert np.array_equal(seg[0], expected)
    bare = pipeline.FamilyTriplet("X", fam.father, fam.mother, fam.child)
    with pytest.raises(ConfigError, match="X"):
        FamilyImages(True).get(bare, "father")


def test_concat_order():
    f = np.ones((16, 512))
    m = 2 * np.ones((16, 512))
    row = concat_parents(f, m)
    assert row.shape == (1, 16384)
    assert np.all(row[0, :8192] == 1) and np.all(row[0, 8192:] == 2)


@pytest.fixture(scope="module")
def short_run(small_dataset):
    cfg = load_config(overrides=["train.epochs=3", "train.lr=1e-4"])
    m = load_manifest(small_dataset, cfg.seed, cfg.train.train_fraction)
    return m, cfg, train(m, cfg)


def test_training_is_deterministic(short_run):
    m, cfg, (ckpt, hist) = short_run
    ckpt2, hist2 = train(m, cfg)
    assert hist.rows() == hist2.rows()
    for name, arr in ckpt.params.arrays().items():
        assert np.array_equal(arr, getattr(ckpt2.params, name))
    assert ckpt.meta == ckpt2.meta


def test_training_history(short_run, tmp_path):
    _, cfg, (ckpt, hist) = short_run
    assert hist.epochs == [0, 1, 2]
    assert all(v is not None and np.isfinite(v) for v in hist.val_mse)
    assert ckpt.meta["best_score"] == min(hist.val_mse)
    assert ckpt.config_digest == cfg.digest()
    hist.write(tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mse,val_mse" and len(lines) == 4
    assert len(json.loads((tmp_path / "metrics.json").read_text())) == 3


def test_zero_lr_leaves_init(small_dataset):
    cfg = load_config(overrides=["train.epochs=2", "train.lr=0"])
    ckpt, _ = train(load_manifest(small_dataset), cfg)
    init = MlpParams.init(seeded_rng(cfg.seed, "init"))
    for name, arr in init.arrays().items():
        assert np.array_equal(getattr(ckpt.params, name), arr)


def test_image_loss_space(small_dataset):
    cfg = load_config(overrides=["train.epochs=2", "train.loss_space=image"])
    _, hist = train(load_manifest(small_dataset), cfg)
    assert all(np.isfinite(v) for v in hist.train_mse)


def test_image_loss_gradient(codec):
    rng = np.random.default_rng(0)
    pred = np.zeros((2, 8192))
    pred[:, :3072] = 0.1 * rng.standard_normal((2, 3072))
    child = rng.uniform(0, 255, (2, 3072))
    loss, dout = pipeline._image_loss_and_dout(codec, pred, child)
    direction = np.zeros_like(pred)
    direction[:, :3072] = rng.standard_normal((2, 3072))
    h = 1e-6
    lp, _ = pipeline._image_loss_and_dout(codec, pred + h * direction, child)
    lm, _ = pipeline._image_loss_and_dout(codec, pred - h * direction, child)
    assert (lp - lm) / (2 * h) == pytest.approx(np.sum(dout * direction), rel=1e-6)


def test_non_finite_loss_names_families(small_dataset, monkeypatch):
    def nan_targets(codec, fams, images):
        return np.full((len(fams), 8192), np.nan)

    monkeypatch.setattr(pipeline, "_child_targets", nan_targets)
    cfg = load_config(overrides=["train.epochs=1"])
    with pytest.raises(NumericError, match="F00"):
        train(load_manifest(small_dataset), cfg)


def test_predict_and_digest(short_run, codec):
    m, cfg, (ckpt, _) = short_run
    fam = m.split("val")[0]
    father, mother = imaging.load_image(fam.father), imaging.load_image(fam.mother)
    z, img = predict(ckpt, father, mother, cfg)
    assert z.shape == (16, 512) and img.shape == (256, 256, 3)
    aug_cfg = load_config(overrides=["augment.p_apply=1.0", "augment.mode=mixup"])
    z2, _ = predict(ckpt, father, mother, aug_cfg)
    assert np.array_equal(z, z2)
    other = load_config(overrides=["codec.seed=1"])
    with pytest.raises(DigestMismatchError, match=ckpt.config_digest):
        predict(ckpt, father, mother, other)


def test_augmented_training_differs(small_dataset):
    m = load_manifest(small_dataset)
    base = load_config(overrides=["train.epochs=1"])
    aug = load_config(overrides=["train.epochs=1", "augment.p_apply=1.0",
                                 "augment.mode=augmix"])
    _, h0 = train(m, base)
    _, h1 = train(m, aug)
    assert h0.train_mse != h1.train_mse
