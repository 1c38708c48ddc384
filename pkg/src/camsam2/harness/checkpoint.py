"""Versioned checkpoint container with named segments and a config-hash guard."""
from __future__ import annotations

import dataclasses
import pickle
from pathlib import Path

import torch

from camsam2.base import SurrogateSegmenter
from camsam2.config import ModelConfig, OpgConfig, config_hash
from camsam2.errors import ConfigError, DataError
from camsam2.model import CamSAM2

FORMAT = "camsam2-checkpoint"
VERSION = 1


def _pack(model_cfg: ModelConfig, segments: dict, optimizer: dict | None, extra: dict | None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "config_hash": config_hash(model_cfg),
        "model_config": dataclasses.asdict(model_cfg),
        "segments": segments,
        "optimizer": optimizer,
        "extra": extra or {},
    }


def save_base(path: str | Path, base: SurrogateSegmenter, extra: dict | None = None) -> None:
    torch.save(_pack(base.cfg, {"base": base.state_dict()}, None, extra), path)


def save_model(path: str | Path, model: CamSAM2, optimizer: dict | None = None,
               extra: dict | None = None) -> None:
    segments = {"base": model.base.state_dict(), **model.adapter_segments()}
    extra = {"opg_config": dataclasses.asdict(model.opg_cfg), **(extra or {})}
    torch.save(_pack(model.cfg, segments, optimizer, extra), path)


def read(path: str | Path) -> dict:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise DataError(f"{path} is not a {FORMAT} file")
    if blob.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    return blob


def model_config_of(blob: dict) -> ModelConfig:
    cfg = dict(blob["model_config"])
    cfg["channels"] = tuple(cfg["channels"])
    return ModelConfig(**cfg)


def _check_hash(blob: dict, expected: ModelConfig | None, force: bool) -> ModelConfig:
    stored = model_config_of(blob)
    if config_hash(stored) != blob["config_hash"]:
        raise DataError("checkpoint config hash does not match its stored config")
    if expected is not None and config_hash(expected) != blob["config_hash"] and not force:
        raise ConfigError("checkpoint was written for a different model config (use force to override)")
    return expected if (expected is not None and force) else stored


def load_base(path: str | Path, expected: ModelConfig | None = None, force: bool = False) -> SurrogateSegmenter:
    blob = read(path)
    cfg = _check_hash(blob, expected, force)
    base = SurrogateSegmenter(cfg)
    base.load_state_dict(blob["segments"]["base"])
    base.freeze()
    return base


def load_model(path: str | Path, opg: OpgConfig | None = None, expected: ModelConfig | None = None,
               force: bool = False) -> CamSAM2:
    """Load a full model.  A base-only checkpoint yields a fresh adapter."""
    blob = read(path)
    cfg = _check_hash(blob, expected, force)
    segs = blob["segments"]
    if opg is None and "opg_config" in blob["extra"]:
        opg = OpgConfig(**blob["extra"]["opg_config"])
    base = SurrogateSegmenter(cfg)
    base.load_state_dict(segs["base"])
    base.freeze()
    model = CamSAM2(cfg, opg, base=base)
    if "adapter.token" in segs:
        with torch.no_grad():
            model.decam.token.copy_(segs["adapter.token"]["token"])
        model.decam.mlp.load_state_dict(segs["adapter.mlp"])
        model.iof.load_state_dict(segs["adapter.iof"])
        model.eof.concat.load_state_dict(segs["adapter.eof.concat"])
        model.eof.attn.load_state_dict(segs["adapter.eof.attn"])
        model.eof.maskproj.load_state_dict(segs["adapter.eof.maskproj"])
    return model
