"""Run configuration: one YAML/JSON file plus command-line overrides."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .augment import AugmentConfig
from .errors import ConfigError, ImageIOError
from .numerics import DROPOUT_P, HIDDEN_DIM, INPUT_DIM, OUTPUT_DIM


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CodecConfig(_Strict):
    type: Literal["toy", "external"] = "toy"
    seed: int = 0
    working_resolution: tuple[int, int] = (32, 32)
    output_resolution: tuple[int, int] = (256, 256)
    endpoint: str | None = None

    def descriptor(self) -> dict:
        if self.type == "external":
            return {"type": "external", "endpoint": self.endpoint}
        return {
            "type": "toy",
            "seed": self.seed,
            "working_resolution": list(self.working_resolution),
            "output_resolution": list(self.output_resolution),
        }


class TrainConfig(_Strict):
    batch_size: int = Field(16, ge=1)
    lr: float = Field(1e-5, ge=0.0)
    epochs: int = Field(200, ge=0)
    loss_space: Literal["latent", "image"] = "latent"
    use_segmentation: bool = False
    train_fraction: float = Field(0.8, gt=0.0, le=1.0)
    dropout_p: float = Field(DROPOUT_P, ge=0.0, lt=1.0)
    out_init: Literal["glorot", "he"] = "glorot"


class EvalConfig(_Strict):
    split: Literal["train", "val", "all"] = "val"
    parent_diagnostic: bool = False


class RunConfig(_Strict):
    seed: int = 0
    manifest: str | None = None
    out_dir: str = "runs/default"
    strict: bool = False
    train: TrainConfig = TrainConfig()
    augment: AugmentConfig = AugmentConfig()
    codec: CodecConfig = CodecConfig()
    eval: EvalConfig = EvalConfig()

    def digest(self) -> str:
        """Hash of everything a trained model's meaning depends on."""
        payload = {
            "codec": self.codec.descriptor(),
            "use_segmentation": self.train.use_segmentation,
            "mlp": [INPUT_DIM, HIDDEN_DIM, OUTPUT_DIM, self.train.dropout_p],
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def training_snapshot(self) -> dict:
        """Config fields that influence training results (no paths)."""
        return self.model_dump(mode="json", include={"seed", "train", "augment", "codec"})


def _set_path(tree: dict, dotted: str, value):
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {key} is not a section")
    node[keys[-1]] = value


def parse_override(text: str):
    """``key.path=value`` with the value parsed as YAML (numbers, bools, lists)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    return key.strip(), value


def load_config(path=None, overrides=(), **flags) -> RunConfig:
    """Load a config file, apply ``key=value`` overrides, then explicit flags.

    Flags whose value is ``None`` are ignored; flags win over the file.
    """
    tree: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ImageIOError(f"cannot read config {path}: {exc}") from exc
        try:
            tree = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        _set_path(tree, *parse_override(item))
    for key, value in flags.items():
        if value is not None:
            _set_path(tree, key, value)
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
