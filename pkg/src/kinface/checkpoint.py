"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"KINFCKPT"
    offset 8   uint32    format version (currently 1)
    offset 12  uint64    header length N in bytes
    offset 20  N bytes   UTF-8 JSON header, keys sorted, no whitespace
    ...        zero padding up to the next multiple of 8
    ...        array payloads, float64 little-endian, C order, in header order

The header holds ``config_digest``, ``seed``, ``dropout_p``, the Adam
scalars (``t``, ``lr``, ``beta1``, ``beta2``, ``eps``), a free-form ``meta``
object, and ``arrays``: a list of ``{name, shape, offset, nbytes}`` with
offsets relative to the start of the payload.  Array names are
``params/<w1|b1|w2|b2>``, ``adam_m/<...>`` and ``adam_v/<...>``.
``payload_sha256`` is the SHA-256 of the whole payload.

Nothing time- or host-dependent is written, so identical training runs give
byte-identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ImageIOError
from .numerics import PARAM_NAMES, AdamState, MlpParams

MAGIC = b"KINFCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclasses.dataclass
class Checkpoint:
    params: MlpParams
    adam: AdamState
    config_digest: str
    seed: int
    meta: dict = dataclasses.field(default_factory=dict)


def _arrays(ckpt: Checkpoint):
    for group, obj in (("params", ckpt.params), ("adam_m", ckpt.adam.m), ("adam_v", ckpt.adam.v)):
        for name in PARAM_NAMES:
            yield f"{group}/{name}", np.ascontiguousarray(getattr(obj, name), dtype="<f8")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    entries = []
    digest = hashlib.sha256()
    offset = 0
    arrays = list(_arrays(ckpt))
    for name, arr in arrays:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": arr.nbytes})
        digest.update(memoryview(arr).cast("B"))
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config_digest": ckpt.config_digest,
        "seed": int(ckpt.seed),
        "dropout_p": ckpt.params.dropout_p,
        "adam": {"t": ckpt.adam.t, "lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1,
                 "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps},
        "meta": ckpt.meta,
        "arrays": entries,
        "payload_sha256": digest.hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    pad = (-(_PREFIX.size + len(blob))) % 8
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
            fh.write(blob)
            fh.write(b"\0" * pad)
            for _, arr in arrays:
                fh.write(memoryview(arr).cast("B"))
    except OSError as exc:
        raise ImageIOError(f"cannot write checkpoint {path}: {exc}") from exc


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        magic, version, n = _PREFIX.unpack(fh.read(_PREFIX.size))
        if magic != MAGIC:
            raise ImageIOError(f"{path} is not a checkpoint file")
        if version != FORMAT_VERSION:
            raise ImageIOError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(fh.read(n))


def load_checkpoint(path, verify=True) -> Checkpoint:
    path = Path(path)
    try:
        header = read_header(path)
        start = _PREFIX.size + len(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        start += (-start) % 8
        raw = np.fromfile(path, dtype=np.uint8, offset=start)
    except (OSError, ValueError, struct.error) as exc:
        raise ImageIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if verify and hashlib.sha256(raw).hexdigest() != header["payload_sha256"]:
        raise ImageIOError(f"{path}: payload checksum mismatch")
    groups = {"params": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["arrays"]:
        group, name = entry["name"].split("/")
        chunk = raw[entry["offset"]: entry["offset"] + entry["nbytes"]]
        groups[group][name] = chunk.view("<f8").reshape(entry["shape"]).astype(np.float64)
    p = header["dropout_p"]
    params = MlpParams(**groups["params"], dropout_p=p)
    adam = AdamState(MlpParams(**groups["adam_m"], dropout_p=p),
                     MlpParams(**groups["adam_v"], dropout_p=p), **header["adam"])
    return Checkpoint(params, adam, header["config_digest"], header["seed"], header["meta"])
