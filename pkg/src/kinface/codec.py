"""Latent codecs: the image <-> 16x512 latent boundary.

The pipeline only talks to :class:`Codec`.  :class:`ToyLinearCodec` is an
exactly invertible stand-in for a pretrained generator: pixels are resized to
the working resolution, normalised to ``[-1, 1]`` and multiplied by a seeded
semi-orthogonal matrix ``A`` of shape ``(8192, D)`` with ``D = h * w * 3``.

* ``D <= 8192``: ``A = [Q; 0]`` with ``Q`` a ``D x D`` orthogonal matrix.  Only
  the first ``D`` latent coordinates are ever populated; ``generate`` ignores
  the zero padding.
* ``D > 8192``: ``A`` has orthonormal rows and ``embed`` is a projection.

Either way ``A A^T`` is the identity on the latent subspace that ``embed``
can reach, which makes ``embed(generate_float(z)) == z`` there.
"""

from __future__ import annotations

import abc
import functools
import logging

import numpy as np

from . import imaging
from .errors import ConfigError, DimensionError, NumericError

log = logging.getLogger(__name__)

LATENT_ROWS = 16
LATENT_COLS = 512
LATENT_SHAPE = (LATENT_ROWS, LATENT_COLS)
LATENT_SIZE = LATENT_ROWS * LATENT_COLS


def check_latent(z) -> np.ndarray:
    arr = np.asarray(z, dtype=np.float64)
    if arr.size != LATENT_SIZE:
        raise DimensionError("latent", LATENT_SHAPE, arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError("latent contains non-finite values")
    return arr.reshape(LATENT_SHAPE)


def normalize_pixels(img):
    return np.asarray(img, dtype=np.float64) / 127.5 - 1.0


def denormalize_pixels(x):
    return (np.asarray(x, dtype=np.float64) + 1.0) * 127.5


class Codec(abc.ABC):
    """Embed images to 16x512 latents and generate images back."""

    working_resolution: tuple[int, int]
    output_resolution: tuple[int, int]

    @abc.abstractmethod
    def embed(self, img) -> np.ndarray: ...

    @abc.abstractmethod
    def generate(self, z, resolution=None) -> np.ndarray: ...

    @abc.abstractmethod
    def descriptor(self) -> dict: ...


class ToyLinearCodec(Codec):
    def __init__(self, seed: int, basis: np.ndarray, working_resolution=(32, 32),
                 output_resolution=(256, 256)):
        self.seed = int(seed)
        self.working_resolution = tuple(int(v) for v in working_resolution)
        self.output_resolution = tuple(int(v) for v in output_resolution)
        h, w = self.working_resolution
        self.pixel_dim = h * w * 3
        expected = (self.pixel_dim, min(self.pixel_dim, LATENT_SIZE))
        if basis.shape != expected:
            raise DimensionError("codec basis", expected, basis.shape)
        # Orthonormal columns; see module docstring for how it maps to A.
        self.basis = basis
        self.basis.flags.writeable = False
        self.active_dim = expected[1]

    def descriptor(self) -> dict:
        return {
            "type": "toy",
            "seed": self.seed,
            "working_resolution": list(self.working_resolution),
            "output_resolution": list(self.output_resolution),
        }

    @property
    def projection(self) -> np.ndarray:
        """The dense ``(8192, D)`` matrix ``A`` (built on demand)."""
        if self.pixel_dim <= LATENT_SIZE:
            out = np.zeros((LATENT_SIZE, self.pixel_dim))
            out[: self.pixel_dim] = self.basis.T
            return out
        return self.basis.T.copy()

    # Batched kernels on flat arrays: pixels (n, D) normalised, latents (n, 8192).

    def project(self, x_flat: np.ndarray) -> np.ndarray:
        x_flat = np.atleast_2d(x_flat)
        z = np.zeros((x_flat.shape[0], LATENT_SIZE))
        z[:, : self.active_dim] = x_flat @ self.basis
        return z

    def unproject(self, z_flat: np.ndarray) -> np.ndarray:
        z_flat = np.atleast_2d(z_flat)
        return z_flat[:, : self.active_dim] @ self.basis.T

    def to_working(self, img) -> np.ndarray:
        img = imaging.as_image(img)
        h, w = self.working_resolution
        if img.shape[:2] != (h, w):
            img = imaging.resize(img, h, w, "bilinear")
        return img

    def embed(self, img) -> np.ndarray:
        x = normalize_pixels(self.to_working(img)).reshape(1, -1)
        return self.project(x).reshape(LATENT_SHAPE)

    def generate_float(self, z) -> np.ndarray:
        """Unclamped working-resolution image for latent ``z``."""
        x = self.unproject(check_latent(z).reshape(1, -1))
        return denormalize_pixels(x).reshape(*self.working_resolution, 3)

    def generate(self, z, resolution=None) -> np.ndarray:
        img = np.clip(self.generate_float(z), 0.0, 255.0)
        h, w = resolution or self.output_resolution
        if (h, w) != self.working_resolution:
            img = np.clip(imaging.resize(img, h, w, "bilinear"), 0.0, 255.0)
        return img

    def pullback(self, grad_pixels_flat: np.ndarray) -> np.ndarray:
        """Chain rule through ``generate_float`` for a batch of flat images.

        ``grad_pixels_flat`` is ``(n, D)`` dL/d(pixels); returns ``(n, 8192)``.
        """
        return self.project(127.5 * np.atleast_2d(grad_pixels_flat))

    def sample_latent(self, rng) -> np.ndarray:
        """Standard-normal latent supported on the reachable subspace."""
        z = np.zeros(LATENT_SIZE)
        z[: self.active_dim] = rng.standard_normal(self.active_dim)
        return z.reshape(LATENT_SHAPE)


def _orthonormal_columns(rng, rows, cols):
    g = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    diag = np.diag(r)
    if np.min(np.abs(diag)) < 1e-10 * np.max(np.abs(diag)):
        return None
    # Fix column signs so the factorisation is unique for a given draw.
    return q * np.sign(diag)


def make_toy_codec(seed: int = 0, working_resolution=(32, 32),
                   output_resolution=(256, 256), max_attempts: int = 8) -> ToyLinearCodec:
    """Build a seeded toy codec; identical seeds give identical matrices.

    Codecs are memoised, so repeated calls with equal arguments share one
    instance.
    """
    return _toy_codec(int(seed), tuple(int(v) for v in working_resolution),
                      tuple(int(v) for v in output_resolution), int(max_attempts))


@functools.lru_cache(maxsize=4)
def _toy_codec(seed, working_resolution, output_resolution, max_attempts):
    h, w = working_resolution
    dim = h * w * 3
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        basis = _orthonormal_columns(rng, dim, min(dim, LATENT_SIZE))
        if basis is not None:
            return ToyLinearCodec(seed, basis, working_resolution, output_resolution)
        log.warning("codec draw %d for seed %d was rank deficient, redrawing", attempt, seed)
    raise NumericError(f"could not draw a full-rank codec basis for seed {seed}")


def codec_from_descriptor(desc: dict) -> Codec:
    kind = desc.get("type", "toy")
    if kind == "toy":
        return make_toy_codec(
            int(desc.get("seed", 0)),
            tuple(desc.get("working_resolution", (32, 32))),
            tuple(desc.get("output_resolution", (256, 256))),
        )
    if kind == "external":
        raise ConfigError(
            f"external codec at {desc.get('endpoint')!r} is not available in this build"
        )
    raise ConfigError(f"unknown codec type {kind!r}")
