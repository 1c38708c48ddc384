"""Configuration dataclasses and the flat ``key = value`` config format."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from camsam2.errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions of the surrogate segmenter and the adapter stack."""

    channels: tuple[int, int, int] = (32, 64, 256)
    token_dim: int = 256
    stem_channels: int = 16
    decoder_depth: int = 2
    decoder_heads: int = 4
    decoder_attn_downsample: int = 2
    mlp_dim: int = 512
    memory_capacity: int = 7
    pe_features: int = 128

    def __post_init__(self) -> None:
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError(f"channels must be three positive ints, got {self.channels}")
        if self.channels[2] != self.token_dim:
            raise ConfigError("deepest feature width must equal the token width")
        if self.token_dim % (self.decoder_heads * self.decoder_attn_downsample):
            raise ConfigError("token_dim must divide by heads * attention downsample")
        if self.memory_capacity < 1:
            raise ConfigError("memory_capacity must be >= 1")
        if self.pe_features * 2 != self.token_dim:
            raise ConfigError("pe_features must be token_dim / 2")

    @property
    def c0(self) -> int:
        return self.channels[0]

    @property
    def mask_channels(self) -> int:
        # the upscaled mask feature shares level-0 width so the EOF mask projection is 1x1
        return self.channels[0]

    @classmethod
    def toy(cls) -> "ModelConfig":
        """Tiny dims used by gradient checks."""
        return cls(channels=(4, 8, 16), token_dim=16, stem_channels=4, decoder_depth=1,
                   decoder_heads=2, decoder_attn_downsample=1, mlp_dim=16, pe_features=8)


SAMPLING = ("fps", "average")
CLUSTERING = ("kmeans", "gmm")
DISTANCES = ("cosine", "euclidean")


@dataclass(frozen=True)
class OpgConfig:
    k: int = 5
    sampling: str = "fps"
    clustering: str = "kmeans"
    distance: str = "cosine"
    window: int | None = None
    mask_threshold: float = 0.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("opg.k must be >= 1")
        if self.sampling not in SAMPLING:
            raise ConfigError(f"opg.sampling must be one of {SAMPLING}")
        if self.clustering not in CLUSTERING:
            raise ConfigError(f"opg.clustering must be one of {CLUSTERING}")
        if self.distance not in DISTANCES:
            raise ConfigError(f"opg.distance must be one of {DISTANCES}")
        if self.window is not None and self.window < 1:
            raise ConfigError("opg.window must be >= 1 or unbounded")


@dataclass(frozen=True)
class RunConfig:
    """Training / evaluation hyperparameters."""

    clip_length: int = 8
    batch_size: int = 4
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 10
    steps: int | None = None
    pretrain_steps: int = 300
    pretrain_lr: float = 1e-3
    size: int = 64
    toggle: str = "on"
    seed: int = 0
    log_every: int = 25

    def __post_init__(self) -> None:
        if self.toggle not in ("on", "off"):
            raise ConfigError("toggle must be 'on' or 'off'")
        for name in ("clip_length", "batch_size", "epochs", "size", "pretrain_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.size % 16:
            raise ConfigError("size must be divisible by 16")


@dataclass(frozen=True)
class Settings:
    model: ModelConfig = field(default_factory=ModelConfig)
    opg: OpgConfig = field(default_factory=OpgConfig)
    run: RunConfig = field(default_factory=RunConfig)


def config_hash(model: ModelConfig) -> str:
    payload = json.dumps(dataclasses.asdict(model), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _coerce(raw: str, template: Any) -> Any:
    raw = raw.strip()
    if isinstance(template, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(template, tuple):
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        kind = type(template[0])
        return tuple(kind(p) for p in parts)
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if template is None:
        if raw.lower() in ("none", "unbounded", ""):
            return None
        return int(raw)
    return raw


def parse_flat(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_settings(values: dict[str, Any] | None = None, base: Settings | None = None) -> Settings:
    """Apply dotted overrides (``opg.k``, ``run.lr``, ``model.channels``) to ``base``."""
    base = base or Settings()
    groups: dict[str, dict[str, Any]] = {
        "model": dataclasses.asdict(base.model),
        "opg": dataclasses.asdict(base.opg),
        "run": dataclasses.asdict(base.run),
    }
    # asdict turns tuples into lists
    groups["model"]["channels"] = tuple(groups["model"]["channels"])
    groups["run"]["betas"] = tuple(groups["run"]["betas"])
    defaults = {"model": ModelConfig(), "opg": OpgConfig(), "run": RunConfig()}
    for key, value in (values or {}).items():
        if value is None:
            continue
        group, _, name = key.partition(".")
        if group not in groups or not name:
            raise ConfigError(f"unknown config key {key!r}")
        if name not in groups[group]:
            raise ConfigError(f"unknown config key {key!r}")
        template = getattr(defaults[group], name)
        if isinstance(value, str):
            try:
                value = _coerce(value, template)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        groups[group][name] = value
    try:
        return Settings(
            model=ModelConfig(**groups["model"]),
            opg=OpgConfig(**groups["opg"]),
            run=RunConfig(**groups["run"]),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_settings(path: str | Path | None, overrides: dict[str, Any] | None = None) -> Settings:
    """Read a flat config file (optional) and apply CLI overrides, which win."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            values.update(parse_flat(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_settings(values)
