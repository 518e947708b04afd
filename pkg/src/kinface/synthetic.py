"""Synthetic family datasets for pipeline checks without real faces.

Every face is a shared mean face plus ``n_factors`` smooth colour fields
with person-specific weights in ``[-1, 1]``.  A child is the pixelwise
average of its parents, so because the codec is affine in pixels its latent
is (up to 8-bit rounding) the average of the parent latents.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import imaging
from .numerics import seeded_rng
from .pipeline import DatasetManifest, FamilyTriplet, assign_splits, write_manifest

# Natural colours for rendering the mean face, indexed by class id.
_FACE_COLOURS = np.array([
    [70, 90, 110], [60, 45, 35], [190, 140, 115], [80, 60, 50], [80, 60, 50],
    [75, 55, 40], [75, 55, 40], [170, 90, 90], [160, 85, 85], [90, 40, 40],
    [200, 155, 130],
], dtype=np.float64)


def face_layout(size: int, dy: int = 0, dx: int = 0) -> np.ndarray:
    """A schematic frontal-face label map using all 11 classes."""
    ys, xs = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    u = (xs - dx) / size - 0.5
    v = (ys - dy) / size - 0.5
    lab = np.zeros((size, size), dtype=np.uint8)

    def ellipse(cu, cv, ru, rv):
        return ((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2 <= 1.0

    lab[ellipse(0.0, -0.05, 0.36, 0.44)] = 1
    lab[ellipse(0.0, 0.05, 0.30, 0.38)] = 10
    lab[ellipse(-0.12, -0.12, 0.07, 0.02)] = 5
    lab[ellipse(0.12, -0.12, 0.07, 0.02)] = 6
    lab[ellipse(-0.12, -0.04, 0.06, 0.035)] = 3
    lab[ellipse(0.12, -0.04, 0.06, 0.035)] = 4
    lab[ellipse(0.0, 0.06, 0.04, 0.08)] = 2
    lab[ellipse(0.0, 0.20, 0.10, 0.025)] = 9
    lab[ellipse(0.0, 0.175, 0.11, 0.02)] = 7
    lab[ellipse(0.0, 0.225, 0.11, 0.02)] = 8
    return lab


def smooth_field(rng, size: int, grid: int = 4) -> np.ndarray:
    coarse = rng.standard_normal((grid, grid, 3))
    field = imaging.resize(coarse, size, size, "bilinear")
    return field / np.sqrt(np.mean(field ** 2))


def make_synthetic_dataset(out_dir, n_families=64, size=32, n_factors=8, amplitude=12.0,
                           seed=0, train_fraction=0.8, with_labels=True) -> DatasetManifest:
    """Write ``n_families`` families as PNGs plus ``manifest.json``.

    ``amplitude`` is the per-factor RMS in 8-bit pixel units; with the
    defaults no pixel ever needs clipping.
    """
    out_dir = Path(out_dir)
    rng = seeded_rng(seed, "synthetic")
    mean_face = _FACE_COLOURS[face_layout(size)]
    factors = np.stack([smooth_field(rng, size) for _ in range(n_factors)]) * amplitude
    families = []
    for k in range(n_families):
        fid = f"F{k:04d}"
        weights = rng.uniform(-1.0, 1.0, size=(2, n_factors))
        father, mother = (mean_face + np.tensordot(w, factors, axes=1) for w in weights)
        father = imaging.quantize(father).astype(np.float64)
        mother = imaging.quantize(mother).astype(np.float64)
        child = 0.5 * (father + mother)
        shifts = rng.integers(-1, 2, size=(2, 2))
        fam_dir = out_dir / fid
        paths = {}
        for role, img in (("father", father), ("mother", mother), ("child", child)):
            paths[role] = fam_dir / f"{role}.png"
            imaging.save_image(img, paths[role])
        if with_labels:
            child_shift = np.round(shifts.mean(axis=0)).astype(int)
            for role, (dy, dx) in (("father", shifts[0]), ("mother", shifts[1]),
                                   ("child", child_shift)):
                paths[f"{role}_labels"] = fam_dir / f"{role}_labels.png"
                imaging.save_labelmap(face_layout(size, int(dy), int(dx)), paths[f"{role}_labels"])
        families.append(FamilyTriplet(fid, **paths))
    splits = assign_splits([f.family_id for f in families], seed, train_fraction)
    manifest = DatasetManifest(out_dir, families, splits)
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest
