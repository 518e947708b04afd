"""Dataset manifests, per-family preprocessing, training and prediction."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import imaging
from .augment import augment_family
from .checkpoint import Checkpoint
from .codec import LATENT_SHAPE, LATENT_SIZE, Codec, codec_from_descriptor
from .config import RunConfig
from .errors import ConfigError, DigestMismatchError, ImageIOError, ManifestError, NumericError
from .numerics import AdamState, MlpParams, adam_step, mlp_backward, mlp_forward, seeded_rng

log = logging.getLogger(__name__)

ROLES = ("father", "mother", "child")


@dataclasses.dataclass(frozen=True)
class FamilyTriplet:
    family_id: str
    father: Path
    mother: Path
    child: Path
    father_labels: Path | None = None
    mother_labels: Path | None = None
    child_labels: Path | None = None

    def image_path(self, role):
        return getattr(self, role)

    def labels_path(self, role):
        return getattr(self, f"{role}_labels")


@dataclasses.dataclass
class DatasetManifest:
    root: Path
    families: list
    splits: dict

    def split(self, name):
        if name == "all":
            return list(self.families)
        return [f for f in self.families if self.splits[f.family_id] == name]

    def to_json(self, root=None) -> dict:
        """Serialisable form with paths relative to ``root`` (default: own root)."""
        root = Path(root or self.root)
        rows = []
        for fam in self.families:
            row = {"family_id": fam.family_id}
            for role in ROLES:
                row[role] = _relpath(fam.image_path(role), root)
                if fam.labels_path(role) is not None:
                    row[f"{role}_labels"] = _relpath(fam.labels_path(role), root)
            row["split"] = self.splits[fam.family_id]
            rows.append(row)
        return {"families": rows}


def _relpath(path, root):
    try:
        return Path(path).relative_to(root).as_posix()
    except ValueError:
        return Path(path).as_posix()


def assign_splits(ids, seed, train_fraction):
    """Seeded shuffle; the first ``round(fraction * n)`` ids (at least one) train."""
    order = seeded_rng(seed, "split").permutation(len(ids))
    n_train = min(len(ids), max(1, int(round(train_fraction * len(ids)))))
    splits = {}
    for rank, idx in enumerate(order):
        splits[ids[idx]] = "train" if rank < n_train else "val"
    return splits


def load_manifest(path, seed=0, train_fraction=0.8) -> DatasetManifest:
    """Read a manifest JSON file.

    Format: ``{"families": [{"family_id", "father", "mother", "child",
    optional "<role>_labels", optional "split"}]}`` with paths relative to
    the manifest's directory.  Explicit splits are used only when every
    family has one; otherwise splits come from a seeded shuffle.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ImageIOError(f"manifest not found: {path}") from exc
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    rows = data.get("families") if isinstance(data, dict) else None
    if not isinstance(rows, list):
        raise ManifestError(f"{path}: expected an object with a 'families' array")
    if not rows:
        raise ManifestError(f"{path}: empty dataset")
    root = path.parent
    families, seen = [], set()
    for row in rows:
        try:
            fid = str(row["family_id"])
            paths = {role: root / row[role] for role in ROLES}
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: family entry missing field {exc}") from exc
        if fid in seen:
            raise ManifestError(f"{path}: duplicate family_id {fid!r}")
        seen.add(fid)
        for role in ROLES:
            key = f"{role}_labels"
            paths[key] = root / row[key] if row.get(key) else None
        for key, p in paths.items():
            if p is not None and not p.is_file():
                raise ImageIOError(f"family {fid}: {key} file not found: {p}")
        families.append(FamilyTriplet(fid, **paths))
    ids = [f.family_id for f in families]
    explicit = [row.get("split") for row in rows]
    if all(s in ("train", "val") for s in explicit):
        splits = dict(zip(ids, explicit))
    else:
        splits = assign_splits(ids, seed, train_fraction)
    return DatasetManifest(root, families, splits)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_json(path.parent), indent=2) + "\n")


# -- preprocessing ---------------------------------------------------------


class FamilyImages:
    """Loads and memoises the codec-domain input images of families.

    With segmentation enabled the codec domain is the colourised label map;
    otherwise it is the photograph.
    """

    def __init__(self, use_segmentation: bool):
        self.use_segmentation = use_segmentation
        self._cache = {}

    def get(self, fam: FamilyTriplet, role: str) -> np.ndarray:
        key = (fam.family_id, role)
        if key not in self._cache:
            if self.use_segmentation:
                lpath = fam.labels_path(role)
                if lpath is None:
                    raise ConfigError(
                        f"family {fam.family_id}: use_segmentation needs a {role} label map"
                    )
                img = imaging.colorize_labels(imaging.load_labelmap(lpath))
            else:
                img = imaging.load_image(fam.image_path(role))
            img.flags.writeable = False
            self._cache[key] = img
        return self._cache[key]


def augmentation_active(cfg: RunConfig) -> bool:
    aug = cfg.augment
    return aug.p_apply > 0.0 and (aug.mode != "none" or aug.color_jitter)


def family_rng(cfg: RunConfig, family_id: str, epoch: int = 0):
    return seeded_rng(cfg.seed, "augment", epoch, family_id)


def augmented_parents(fam, cfg: RunConfig, images: FamilyImages, rng):
    """Codec-domain parent images after augmentation, plus the applied record."""
    father, mother, child = (images.get(fam, role) for role in ROLES)
    out = augment_family(father, mother, child, cfg.augment, rng, cfg.strict)
    if out.child is not child:
        raise RuntimeError(f"family {fam.family_id}: child image was altered by augmentation")
    return out.father, out.mother, out.applied


def preprocess_family(fam, cfg: RunConfig, codec: Codec, rng, images=None):
    """Latents ``(g_f, g_m, g_c)`` of one family.

    Parents are augmented (when configured) in the codec input domain;
    the child goes straight to the codec.
    """
    images = images or FamilyImages(cfg.train.use_segmentation)
    father, mother, _ = augmented_parents(fam, cfg, images, rng)
    child = images.get(fam, "child")
    return codec.embed(father), codec.embed(mother), codec.embed(child)


def concat_parents(g_f, g_m) -> np.ndarray:
    """``(1, 16384)`` row: flattened father latent, then mother latent."""
    return np.concatenate([np.ravel(g_f), np.ravel(g_m)])[None, :]


# -- training --------------------------------------------------------------


@dataclasses.dataclass
class MetricsHistory:
    epochs: list = dataclasses.field(default_factory=list)
    train_mse: list = dataclasses.field(default_factory=list)
    val_mse: list = dataclasses.field(default_factory=list)

    def append(self, epoch, train, val):
        self.epochs.append(epoch)
        self.train_mse.append(train)
        self.val_mse.append(val)

    def rows(self):
        return list(zip(self.epochs, self.train_mse, self.val_mse))

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_mse", "val_mse"])
            for epoch, tr, va in self.rows():
                writer.writerow([epoch, repr(tr), "" if va is None else repr(va)])
        (out_dir / "metrics.json").write_text(json.dumps(
            [{"epoch": e, "train_mse": t, "val_mse": v} for e, t, v in self.rows()], indent=1) + "\n")


def _embed_many(codec: Codec, imgs) -> np.ndarray:
    if hasattr(codec, "project") and hasattr(codec, "to_working"):
        x = np.stack([codec.to_working(img).ravel() for img in imgs]) / 127.5 - 1.0
        return codec.project(x)
    return np.stack([np.ravel(codec.embed(img)) for img in imgs])


def _child_targets(codec, fams, images):
    return _embed_many(codec, [images.get(f, "child") for f in fams])


def _parent_inputs(codec, fams, images, cfg, epoch, augment):
    fathers, mothers = [], []
    for fam in fams:
        if augment:
            f, m, _ = augmented_parents(fam, cfg, images, family_rng(cfg, fam.family_id, epoch))
        else:
            f, m = images.get(fam, "father"), images.get(fam, "mother")
        fathers.append(f)
        mothers.append(m)
    return np.concatenate([_embed_many(codec, fathers), _embed_many(codec, mothers)], axis=1)


def _image_loss_and_dout(codec, pred, child_pixels):
    """Mean squared pixel error of generate(pred) against the child, and dL/dpred."""
    if not hasattr(codec, "pullback"):
        raise ConfigError("loss_space=image needs a codec with a differentiable generator")
    pixels = (codec.unproject(pred) + 1.0) * 127.5
    resid = pixels - child_pixels
    loss = float(np.mean(resid ** 2))
    return loss, codec.pullback(resid * (2.0 / resid.size))


class _BestSnapshot:
    """Copy of the best parameters and optimiser state, in reused buffers."""

    def __init__(self, params: MlpParams, state: AdamState):
        self.params = params.zeros_like()
        self.state = dataclasses.replace(state, m=params.zeros_like(), v=params.zeros_like(),
                                         live=None)
        self.score = math.inf
        self.epoch = -1

    def store(self, score, epoch, params: MlpParams, state: AdamState):
        for src, dst in ((params, self.params), (state.m, self.state.m), (state.v, self.state.v)):
            for name, arr in src.arrays().items():
                np.copyto(getattr(dst, name), arr)
        self.state = dataclasses.replace(self.state, t=state.t, live=None)
        self.score, self.epoch = score, epoch


def predict_latents(params: MlpParams, inputs, chunk=64) -> np.ndarray:
    outs = [mlp_forward(params, inputs[i:i + chunk])[0] for i in range(0, len(inputs), chunk)]
    return np.concatenate(outs) if outs else np.zeros((0, LATENT_SIZE))


def train(manifest: DatasetManifest, cfg: RunConfig, codec: Codec | None = None,
          on_epoch=None):
    """Fit the aggregator; returns ``(best Checkpoint, MetricsHistory)``.

    Random streams are derived from ``cfg.seed`` by purpose (init, shuffle,
    dropout, augmentation per family and epoch), so results do not depend on
    evaluation order elsewhere.
    """
    tc = cfg.train
    codec = codec or codec_from_descriptor(cfg.codec.descriptor())
    train_fams = manifest.split("train")
    val_fams = manifest.split("val")
    if not train_fams:
        raise ManifestError("no training families in manifest")
    images = FamilyImages(tc.use_segmentation)
    augment = augmentation_active(cfg)

    params = MlpParams.init(seeded_rng(cfg.seed, "init"), dropout_p=tc.dropout_p,
                            out_init=tc.out_init)
    state = AdamState.fresh(params, lr=tc.lr)
    train_targets = _child_targets(codec, train_fams, images)
    if tc.loss_space == "image":
        child_pixels = np.stack([codec.to_working(images.get(f, "child")).ravel()
                                 for f in train_fams])
    fixed_inputs = None if augment else _parent_inputs(codec, train_fams, images, cfg, 0, False)
    if val_fams:
        val_inputs = _parent_inputs(codec, val_fams, images, cfg, 0, False)
        val_targets = _child_targets(codec, val_fams, images)

    history = MetricsHistory()
    best = _BestSnapshot(params, state)
    for epoch in range(tc.epochs):
        inputs = fixed_inputs
        if inputs is None:
            inputs = _parent_inputs(codec, train_fams, images, cfg, epoch, True)
        order = seeded_rng(cfg.seed, "shuffle", epoch).permutation(len(train_fams))
        drop_rng = seeded_rng(cfg.seed, "dropout", epoch)
        total = 0.0
        for b, start in enumerate(range(0, len(order), tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            out, cache = mlp_forward(params, inputs[idx], train_mode=True, rng=drop_rng)
            if tc.loss_space == "latent":
                resid = out - train_targets[idx]
                loss = float(np.mean(resid ** 2))
                dout = resid * (2.0 / resid.size)
            else:
                loss, dout = _image_loss_and_dout(codec, out, child_pixels[idx])
            if not math.isfinite(loss):
                ids = [train_fams[i].family_id for i in idx]
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}, families {ids}")
            grads = mlp_backward(params, cache, dout)
            adam_step(params, grads, state, inplace=True)
            total += loss * len(idx)
        train_mse = total / len(order)
        val_mse = None
        if val_fams:
            val_mse = float(np.mean((predict_latents(params, val_inputs) - val_targets) ** 2))
        history.append(epoch, train_mse, val_mse)
        if on_epoch is not None:
            on_epoch(epoch, train_mse, val_mse)
        score = val_mse if val_mse is not None else train_mse
        if score < best.score:
            best.store(score, epoch, params, state)
    if best.epoch < 0:
        best.store(math.inf, -1, params, state)
    ckpt = Checkpoint(
        best.params, best.state, cfg.digest(), cfg.seed,
        meta={"best_epoch": best.epoch,
              "best_score": None if math.isinf(best.score) else best.score,
              "config": cfg.training_snapshot()},
    )
    return ckpt, history


# -- prediction ------------------------------------------------------------


def check_digest(ckpt: Checkpoint, cfg: RunConfig) -> None:
    current = cfg.digest()
    if ckpt.config_digest != current:
        raise DigestMismatchError(ckpt.config_digest, current)


def predict(ckpt: Checkpoint, father_img, mother_img, cfg: RunConfig, codec=None):
    """Child latent and image from two codec-domain parent images.

    Evaluation mode throughout: no dropout, no augmentation.
    """
    check_digest(ckpt, cfg)
    codec = codec or codec_from_descriptor(cfg.codec.descriptor())
    x = concat_parents(codec.embed(father_img), codec.embed(mother_img))
    z = mlp_forward(ckpt.params, x)[0].reshape(LATENT_SHAPE)
    return z, codec.generate(z)
