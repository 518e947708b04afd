"""Image planes, label maps, HSV jitter, resizing and PNG I/O.

Working images are ``(H, W, 3)`` float64 arrays in RGB order with values in
``[0, 255]``; conversion to 8 bits happens only when writing files.  Label
maps are ``(H, W)`` uint8 arrays of class ids.

Resizing uses half-pixel centres (the ``align_corners=False`` convention):
output pixel ``i`` samples input coordinate ``(i + 0.5) * in / out - 0.5``,
clamped to the valid range, so edges replicate.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image
from skimage import color as skcolor

from .errors import DimensionError, ImageIOError

log = logging.getLogger(__name__)

CLASS_NAMES = (
    "background",
    "hair",
    "nose",
    "left_eye",
    "right_eye",
    "left_eyebrow",
    "right_eyebrow",
    "upper_lip",
    "lower_lip",
    "inner_mouth",
    "skin",
)
NUM_CLASSES = len(CLASS_NAMES)

HUE_PERIOD = 180.0
JITTER_LIMIT = 5.0

# One colour per class id; pairwise distinct so decoding is lossless.
DEFAULT_PALETTE = np.array(
    [
        [0, 0, 0],
        [128, 64, 32],
        [255, 170, 0],
        [0, 85, 255],
        [0, 255, 255],
        [170, 0, 255],
        [255, 0, 255],
        [255, 0, 85],
        [170, 0, 0],
        [85, 255, 0],
        [255, 204, 170],
    ],
    dtype=np.uint8,
)


def as_image(img) -> np.ndarray:
    """Validate and return ``img`` as a float64 ``(H, W, 3)`` array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError("image", "(H, W, 3) with H, W > 0", arr.shape)
    return arr


def check_palette(palette) -> np.ndarray:
    pal = np.asarray(palette)
    if pal.shape != (NUM_CLASSES, 3):
        raise DimensionError("palette", (NUM_CLASSES, 3), pal.shape)
    if np.any(pal < 0) or np.any(pal > 255):
        raise ValueError("palette entries must lie in [0, 255]")
    if len({tuple(int(c) for c in row) for row in pal}) != NUM_CLASSES:
        raise ValueError("palette colours must be pairwise distinct")
    return pal.astype(np.uint8)


def check_labels(labels) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.ndim != 2 or 0 in lab.shape:
        raise DimensionError("label map", "(H, W) with H, W > 0", lab.shape)
    if lab.size and (lab.min() < 0 or lab.max() >= NUM_CLASSES):
        bad = int(lab.max()) if lab.max() >= NUM_CLASSES else int(lab.min())
        raise ValueError(f"label map contains class id {bad}; valid ids are 0..{NUM_CLASSES - 1}")
    return lab.astype(np.uint8)


# -- colour space ----------------------------------------------------------


def rgb_to_hsv(img) -> np.ndarray:
    """RGB in [0, 255] to HSV with hue in [0, 180) and s, v in [0, 255]."""
    rgb = as_image(img)
    hsv = skcolor.rgb2hsv(rgb / 255.0)
    out = np.empty_like(hsv)
    out[..., 0] = hsv[..., 0] * HUE_PERIOD
    out[..., 1:] = hsv[..., 1:] * 255.0
    out[..., 0][out[..., 0] >= HUE_PERIOD] = 0.0
    return out


def hsv_to_rgb(hsv) -> np.ndarray:
    arr = as_image(hsv)
    unit = np.empty_like(arr)
    unit[..., 0] = arr[..., 0] / HUE_PERIOD
    unit[..., 1:] = arr[..., 1:] / 255.0
    return np.clip(skcolor.hsv2rgb(unit) * 255.0, 0.0, 255.0)


def _check_jitter(name, value, strict):
    if abs(value) > JITTER_LIMIT:
        msg = f"{name} shift {value} outside [-{JITTER_LIMIT:g}, {JITTER_LIMIT:g}]"
        if strict:
            raise ValueError(msg)
        log.warning(msg)


def shift_hue(hsv, x: float, strict: bool = False) -> np.ndarray:
    """Add ``x`` to the hue channel modulo 180 (non-negative result)."""
    _check_jitter("hue", x, strict)
    out = np.array(hsv, dtype=np.float64, copy=True)
    h = np.mod(out[..., 0] + x, HUE_PERIOD)
    # np.mod can round a tiny negative sum up to exactly the period.
    h[h >= HUE_PERIOD] = 0.0
    out[..., 0] = h
    return out


def shift_saturation(hsv, y: float, strict: bool = False) -> np.ndarray:
    """Add ``y`` to the saturation channel, clamped to [0, 255]."""
    _check_jitter("saturation", y, strict)
    out = np.array(hsv, dtype=np.float64, copy=True)
    out[..., 1] = np.minimum(255.0, np.maximum(0.0, out[..., 1] + y))
    return out


def jitter_hue_saturation(img, x: float, y: float, strict: bool = False) -> np.ndarray:
    """Apply a hue shift then a saturation shift to an RGB image."""
    hsv = shift_saturation(shift_hue(rgb_to_hsv(img), x, strict), y, strict)
    return hsv_to_rgb(hsv)


# -- label maps ------------------------------------------------------------


def colorize_labels(labels, palette=DEFAULT_PALETTE) -> np.ndarray:
    lab = check_labels(labels)
    pal = check_palette(palette)
    return pal[lab].astype(np.float64)


def decode_labels(img, palette=DEFAULT_PALETTE, strict: bool = False):
    """Map palette colours back to class ids.

    Returns ``(labels, mismatches)`` where ``mismatches`` counts pixels that
    matched no palette entry exactly and were assigned the nearest colour
    (squared RGB distance, lowest id on ties).  In strict mode any mismatch
    raises ``ValueError``.
    """
    rgb = as_image(img)
    pal = check_palette(palette).astype(np.float64)
    dist = ((rgb[:, :, None, :] - pal[None, None, :, :]) ** 2).sum(axis=-1)
    labels = np.argmin(dist, axis=-1).astype(np.uint8)
    mismatches = int(np.count_nonzero(dist.min(axis=-1) != 0.0))
    if mismatches:
        if strict:
            raise ValueError(f"{mismatches} pixels do not match any palette colour")
        log.warning("%d pixels decoded via nearest palette colour", mismatches)
    return labels, mismatches


# -- resizing --------------------------------------------------------------


def _source_coords(n_in, n_out):
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(x, 0.0, n_in - 1)


def _bilinear_axis(arr, n_out, axis):
    n_in = arr.shape[axis]
    if n_in == n_out:
        return arr
    x = _source_coords(n_in, n_out)
    lo = np.floor(x).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = x - lo
    shape = [1] * arr.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    return a + (b - a) * frac


def _nearest_index(n_in, n_out):
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out)
    return np.minimum(np.floor(x).astype(np.intp), n_in - 1)


def resize(img, out_h: int, out_w: int, mode: str = "bilinear") -> np.ndarray:
    """Resize an image plane (or, with ``mode="nearest"``, any 2-D/3-D grid).

    Nearest mode picks the input pixel whose centre contains the output
    pixel centre and never blends values, so it is safe for label maps.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    arr = np.asarray(img)
    if mode == "nearest":
        rows = _nearest_index(arr.shape[0], out_h)
        cols = _nearest_index(arr.shape[1], out_w)
        return arr[rows][:, cols].copy()
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    arr = arr.astype(np.float64)
    out = _bilinear_axis(arr, out_h, 0)
    out = _bilinear_axis(out, out_w, 1)
    return np.array(out, copy=True)


# -- file I/O --------------------------------------------------------------


def quantize(img) -> np.ndarray:
    """Round half up to uint8 after clamping to [0, 255]."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 255.0)
    return np.floor(arr + 0.5).astype(np.uint8)


def _open(path):
    try:
        with Image.open(path) as im:
            im.load()
            return im.copy()
    except FileNotFoundError as exc:
        raise ImageIOError(f"no such file: {path}") from exc
    except OSError as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc


def load_image(path) -> np.ndarray:
    im = _open(path)
    if im.mode != "RGB":
        raise ImageIOError(f"{path}: expected 8-bit RGB, got mode {im.mode!r}")
    return np.asarray(im, dtype=np.float64)


def save_image(img, path) -> None:
    arr = quantize(as_image(img))
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"cannot write image {path}: {exc}") from exc


def load_labelmap(path) -> np.ndarray:
    im = _open(path)
    if im.mode not in ("L", "P"):
        raise ImageIOError(f"{path}: label map must be single-channel, got mode {im.mode!r}")
    raw = np.asarray(im)
    if raw.size and raw.max() >= NUM_CLASSES:
        raise ImageIOError(
            f"{path}: invalid class id {int(raw.max())} (valid ids are 0..{NUM_CLASSES - 1})"
        )
    return raw.astype(np.uint8)


def save_labelmap(labels, path, palette=None) -> None:
    """Write raw class ids as an 8-bit grayscale PNG.

    If ``palette`` is given it is stored alongside as ``<stem>.palette.json``.
    """
    lab = check_labels(labels)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(lab, mode="L").save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"cannot write label map {path}: {exc}") from exc
    if palette is not None:
        save_palette(palette, path.with_name(path.stem + ".palette.json"))


def save_palette(palette, path) -> None:
    pal = check_palette(palette)
    Path(path).write_text(json.dumps(pal.tolist()) + "\n")


def load_palette(path) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read palette {path}: {exc}") from exc
    return check_palette(np.array(data))
