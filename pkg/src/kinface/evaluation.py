"""Evaluation metrics and report files."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from . import imaging
from .checkpoint import Checkpoint
from .codec import LATENT_SHAPE, codec_from_descriptor
from .config import RunConfig
from .errors import ImageIOError, ManifestError
from .pipeline import (
    DatasetManifest, FamilyImages, _embed_many, _parent_inputs, check_digest, predict_latents,
)

COLUMNS = ("family_id", "mse_latent", "mse_image", "cosine")
DIAGNOSTIC_COLUMN = "diag_parent_cosine_latent"


def cosine_distance(u, v) -> float:
    """``1 - u.v / (|u| |v|)`` on flattened inputs; lies in [0, 2]."""
    a = np.ravel(np.asarray(u, dtype=np.float64))
    b = np.ravel(np.asarray(v, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"cosine_distance operands differ in size: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance is undefined for a zero vector")
    # Normalise first so the dot product of unit vectors cannot overflow.
    sim = float(np.dot(a / na, b / nb))
    dist = 1.0 - min(1.0, max(-1.0, sim))
    assert 0.0 <= dist <= 2.0
    return dist


def mean_exact(values) -> float:
    """Correctly rounded mean, so the result is independent of order."""
    values = list(values)
    return math.fsum(values) / len(values)


@dataclasses.dataclass
class EvalReport:
    records: list
    aggregates: dict
    config_digest: str
    extra_columns: tuple = ()

    @property
    def columns(self):
        return COLUMNS + tuple(self.extra_columns)

    def to_json(self) -> dict:
        return {
            "columns": list(self.columns),
            "records": self.records,
            "aggregates": self.aggregates,
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_json(cls, data) -> "EvalReport":
        extra = tuple(c for c in data["columns"] if c not in COLUMNS)
        return cls(data["records"], data["aggregates"], data["config_digest"], extra)


def aggregate(records, columns) -> dict:
    return {f"mean_{c}": mean_exact(r[c] for r in records) for c in columns if c != "family_id"}


def evaluate(ckpt: Checkpoint, manifest: DatasetManifest, cfg: RunConfig, split=None,
             codec=None) -> EvalReport:
    """Per-family latent MSE, image MSE and image cosine distance.

    Images are compared at the codec's output resolution, flattened in
    row-major RGB order.  The zero-predictor latent MSE on the same families
    is reported as ``baseline_zero_mse_latent`` for reference.
    """
    check_digest(ckpt, cfg)
    split = split or cfg.eval.split
    fams = manifest.split(split)
    if not fams:
        raise ManifestError(f"split {split!r} has no families")
    codec = codec or codec_from_descriptor(cfg.codec.descriptor())
    images = FamilyImages(cfg.train.use_segmentation)
    inputs = _parent_inputs(codec, fams, images, cfg, 0, False)
    targets = _embed_many(codec, [images.get(f, "child") for f in fams])
    preds = predict_latents(ckpt.params, inputs)
    out_h, out_w = codec.output_resolution
    records = []
    for k, fam in enumerate(fams):
        generated = codec.generate(preds[k].reshape(LATENT_SHAPE))
        real = images.get(fam, "child")
        if real.shape[:2] != (out_h, out_w):
            real = imaging.resize(real, out_h, out_w, "bilinear")
        rec = {
            "family_id": fam.family_id,
            "mse_latent": float(np.mean((preds[k] - targets[k]) ** 2)),
            "mse_image": float(np.mean((generated - real) ** 2)),
            "cosine": cosine_distance(generated, real),
        }
        if cfg.eval.parent_diagnostic:
            half = inputs.shape[1] // 2
            rec[DIAGNOSTIC_COLUMN] = 0.5 * (cosine_distance(preds[k], inputs[k, :half])
                                            + cosine_distance(preds[k], inputs[k, half:]))
        records.append(rec)
    extra = (DIAGNOSTIC_COLUMN,) if cfg.eval.parent_diagnostic else ()
    aggregates = aggregate(records, COLUMNS + extra)
    aggregates["baseline_zero_mse_latent"] = mean_exact(
        float(np.mean(t ** 2)) for t in targets)
    aggregates["families"] = len(records)
    return EvalReport(records, aggregates, ckpt.config_digest, extra)


def write_report(report: EvalReport, path, fmt=None) -> None:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            path.write_text(json.dumps(report.to_json(), indent=2) + "\n")
        elif fmt == "csv":
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(report.columns)
                for rec in report.records:
                    writer.writerow([rec[c] if c == "family_id" else repr(rec[c])
                                     for c in report.columns])
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise ImageIOError(f"cannot write report {path}: {exc}") from exc


def read_report(path) -> EvalReport:
    return EvalReport.from_json(json.loads(Path(path).read_text()))


def read_report_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (v if k == "family_id" else float(v)) for k, v in row.items()} for row in rows]


def format_table(report: EvalReport) -> str:
    agg = report.aggregates
    lines = [
        f"{'split families':<28}{agg['families']:>12d}",
        f"{'MSE (latent)':<28}{agg['mean_mse_latent']:>12.6g}",
        f"{'MSE (images)':<28}{agg['mean_mse_image']:>12.6g}",
        f"{'cosine distance':<28}{agg['mean_cosine']:>12.6g}",
        f"{'zero-predictor MSE (latent)':<28}{agg['baseline_zero_mse_latent']:>12.6g}",
    ]
    if f"mean_{DIAGNOSTIC_COLUMN}" in agg:
        lines.append(f"{'parent cosine (diagnostic)':<28}{agg[f'mean_{DIAGNOSTIC_COLUMN}']:>12.6g}")
    return "\n".join(lines)
