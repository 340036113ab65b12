"""Structured run configuration with ``[section]`` / ``key = value`` text form."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any

from .errors import DataError


@dataclass
class ModelConfig:
    resolution: int = 32
    d_model: int = 128
    d_latent: int = 128
    bottleneck_dim: int = 16
    k: int = 32
    enc_layers: int = 2
    dec_layers: int = 4
    heads: int = 4
    max_faces: int = 128
    m: int = 1024
    freq_bands: int = 6
    d_coord: int = 32
    head_hidden: int = 256
    ffn_mult: int = 4
    queries: str = "fps"  # fps | learnable
    head: str = "causal_mlp"  # causal_mlp | parallel | attention
    pooling: str = "embed"  # embed | continuous

    def validate(self) -> None:
        if self.resolution < 2:
            raise DataError("resolution must be >= 2")
        if self.d_model % self.heads or self.d_latent % self.heads:
            raise DataError("d_model and d_latent must be divisible by heads")
        if self.k > self.m:
            raise DataError("k must not exceed m")
        if self.max_faces < 1:
            raise DataError("max_faces must be >= 1")
        if self.queries not in ("fps", "learnable"):
            raise DataError(f"unknown queries mode {self.queries!r}")
        if self.head not in ("causal_mlp", "parallel", "attention"):
            raise DataError(f"unknown head {self.head!r}")
        if self.pooling not in ("embed", "continuous"):
            raise DataError(f"unknown pooling {self.pooling!r}")


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.0
    warmup_frac: float = 0.03
    grad_clip: float = 1.0
    seed: int = 0
    optimizer: str = "adamw"  # adamw | muon
    checkpoint_every: int = 0
    log_every: int = 1
    # when > 0, evaluate teacher-forced accuracy on the training set every
    # eval_every steps and stop once it reaches this value
    stop_accuracy: float = 0.0
    eval_every: int = 250

    def validate(self) -> None:
        if self.steps < 1:
            raise DataError("steps must be >= 1")
        if not self.lr > 0:
            raise DataError("lr must be positive")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.optimizer not in ("adamw", "muon"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class DataConfig:
    order: str = "zyx"
    augment_rotate: bool = False
    augment_flip: bool = False
    augment_scale: bool = False
    scale_lo: float = 0.75
    scale_hi: float = 1.25
    rotation_axis: str = "y"
    # draw a fresh surface sample every step instead of one per mesh
    resample_points: bool = True
    holdout: int = 2


@dataclass
class EvalConfig:
    samples: int = 4096
    seed: int = 0


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig, "eval": EvalConfig}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()


def _coerce(kind: type, raw: str, key: str) -> Any:
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise DataError(f"bad value for {key}: {raw!r}") from None


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise DataError(f"config syntax error: {exc}") from None
    cfg = RunConfig()
    for section in cp.sections():
        if section not in SECTIONS:
            raise DataError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        types = {f.name: f.type for f in fields(target)}
        for key, raw in cp.items(section):
            if key not in types:
                raise DataError(f"unknown config key {section}.{key}")
            kind = {"int": int, "float": float, "bool": bool, "str": str}[types[key]]
            setattr(target, key, _coerce(kind, raw, f"{section}.{key}"))
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    out = []
    for section in SECTIONS:
        out.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(obj):
            out.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)


def replace(cfg: RunConfig, **sections: dict) -> RunConfig:
    """Copy of ``cfg`` with per-section field overrides, e.g. model={"head": "parallel"}."""
    kw = {}
    for name in SECTIONS:
        sub = getattr(cfg, name)
        kw[name] = dataclasses.replace(sub, **sections.get(name, {}))
    return RunConfig(**kw)
