"""Parent-image augmentation: within-family MixUp and single affine ops.

Only parents are ever modified; the child image is passed through as the
very same array object.
"""

from __future__ import annotations

import math
from typing import Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import imaging
from .errors import DimensionError

AFFINE_KINDS = ("shear_x", "shear_y", "translate_x", "translate_y", "rotate", "hflip")


class AugmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    p_apply: float = Field(0.5, ge=0.0, le=1.0)
    mode: Literal["none", "mixup", "augmix"] = "none"
    rotate_range_deg: float = Field(15.0, ge=0.0)
    shear_range: float = Field(0.10, ge=0.0)
    translate_frac: float = Field(0.10, ge=0.0)
    chain_length: int = Field(1, ge=1)
    # Fixed (alpha, beta) for MixUp; drawn uniformly from [0, 1] when unset.
    mixup_weights: tuple[float, float] | None = None
    color_jitter: bool = False
    hue_range: tuple[float, float] = (-5.0, 5.0)
    sat_range: tuple[float, float] = (-5.0, 5.0)

    @model_validator(mode="after")
    def _check_ranges(self):
        for name in ("hue_range", "sat_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be (low, high) with low <= high")
        if self.mixup_weights is not None and not all(0.0 <= w <= 1.0 for w in self.mixup_weights):
            raise ValueError("mixup_weights must lie in [0, 1]")
        return self


class AffineOp(NamedTuple):
    kind: str
    magnitude: float = 0.0


class Augmented(NamedTuple):
    father: np.ndarray
    mother: np.ndarray
    child: np.ndarray
    # Per-parent list of applied ops, MixUp weights, and jitter values.
    applied: dict


def mixup_parents(img_f, img_m, alpha: float, beta: float):
    """Convex mix of the two parents with independent weights."""
    f = imaging.as_image(img_f)
    m = imaging.as_image(img_m)
    if f.shape != m.shape:
        raise DimensionError("mother image", f.shape, m.shape)
    for name, w in (("alpha", alpha), ("beta", beta)):
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {w}")
    lo = np.minimum(f, m)
    hi = np.maximum(f, m)
    # The clip only removes last-ulp rounding overshoot.
    f_new = np.clip(alpha * f + (1.0 - alpha) * m, lo, hi)
    m_new = np.clip(beta * m + (1.0 - beta) * f, lo, hi)
    return f_new, m_new


def sample_affine(rng, cfg: AugmentConfig) -> AffineOp:
    kind = AFFINE_KINDS[int(rng.integers(len(AFFINE_KINDS)))]
    if kind == "hflip":
        return AffineOp(kind)
    limit = {
        "rotate": cfg.rotate_range_deg,
        "shear_x": cfg.shear_range,
        "shear_y": cfg.shear_range,
        "translate_x": cfg.translate_frac,
        "translate_y": cfg.translate_frac,
    }[kind]
    return AffineOp(kind, float(rng.uniform(-limit, limit)))


def _source_coords(op: AffineOp, h, w):
    """Input coordinates sampled by each output pixel (inverse mapping)."""
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    mag = op.magnitude
    if op.kind == "translate_x":
        return ys, xs - mag * w
    if op.kind == "translate_y":
        return ys - mag * h, xs
    if op.kind == "shear_x":
        return ys, xs - mag * (ys - cy)
    if op.kind == "shear_y":
        return ys - mag * (xs - cx), xs
    if op.kind == "rotate":
        # Positive angles turn the content counter-clockwise on screen.
        theta = math.radians(mag)
        cos, sin = math.cos(theta), math.sin(theta)
        dy, dx = ys - cy, xs - cx
        return cy + cos * dy + sin * dx, cx - sin * dy + cos * dx
    raise ValueError(f"unknown affine op {op.kind!r}")


def _sample_bilinear(img, sy, sx):
    h, w = img.shape[:2]
    sy = np.clip(sy, 0.0, h - 1)
    sx = np.clip(sx, 0.0, w - 1)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[..., None]
    fx = (sx - x0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def apply_affine(img, op: AffineOp, interpolation: str = "bilinear") -> np.ndarray:
    """Warp an image (or label map with ``interpolation="nearest"``).

    Edges are replicated.  ``hflip`` reverses columns exactly and a zero
    magnitude returns an unchanged copy.
    """
    arr = np.asarray(img)
    if op.kind == "hflip":
        return arr[:, ::-1].copy()
    if op.kind not in AFFINE_KINDS:
        raise ValueError(f"unknown affine op {op.kind!r}")
    if op.magnitude == 0.0:
        return arr.copy()
    h, w = arr.shape[:2]
    sy, sx = _source_coords(op, h, w)
    if interpolation == "nearest":
        iy = np.clip(np.floor(sy + 0.5), 0, h - 1).astype(np.intp)
        ix = np.clip(np.floor(sx + 0.5), 0, w - 1).astype(np.intp)
        return arr[iy, ix]
    out = _sample_bilinear(imaging.as_image(arr), sy, sx)
    return np.clip(out, 0.0, 255.0)


def augment_family(father, mother, child, cfg: AugmentConfig, rng, strict=False) -> Augmented:
    """Augment the two parents of one family; the child is returned as is.

    One gate is drawn per family.  Draw order is fixed: gate, then MixUp
    weights or per-parent affine ops (father first), then per-parent jitter.
    """
    applied = {"father": [], "mother": [], "mixup": None, "jitter": None}
    gate = rng.random() < cfg.p_apply
    if not gate or (cfg.mode == "none" and not cfg.color_jitter):
        return Augmented(father, mother, child, applied)
    if cfg.mode == "mixup":
        if cfg.mixup_weights is None:
            alpha, beta = float(rng.random()), float(rng.random())
        else:
            alpha, beta = cfg.mixup_weights
        father, mother = mixup_parents(father, mother, alpha, beta)
        applied["mixup"] = (alpha, beta)
    elif cfg.mode == "augmix":
        warped = []
        for role, img in (("father", father), ("mother", mother)):
            for _ in range(cfg.chain_length):
                op = sample_affine(rng, cfg)
                img = apply_affine(img, op)
                applied[role].append(op)
            warped.append(img)
        father, mother = warped
    if cfg.color_jitter:
        shifts = []
        jittered = []
        for img in (father, mother):
            x = float(rng.uniform(*cfg.hue_range))
            y = float(rng.uniform(*cfg.sat_range))
            jittered.append(imaging.jitter_hue_saturation(img, x, y, strict))
            shifts.append((x, y))
        father, mother = jittered
        applied["jitter"] = shifts
    return Augmented(father, mother, child, applied)
