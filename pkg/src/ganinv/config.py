"""Run configuration: dataclasses plus the line-oriented file format.

Config files are `key = value` lines with '#' comments and namespaced
keys (train.lr, loss.lambda_pixel, toy.resolution, hyper.D, ...).
Unknown keys are hard errors. A `profile` key selects one of two
built-in loss-weight presets and is applied before any explicit keys,
so single values can still be overridden afterwards:

    faces-analog   lambda_id=0.1, lambda_adv=0.005, r1_gamma=10
    church-analog  lambda_id=0.5, lambda_adv=0.15,  r1_gamma=100

lambda_pixel=1.0 and lambda_perc=0.8 are shared by both profiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace


class ConfigError(Exception):
    pass


@dataclass
class ToyDims:
    """Sizes of the toy setup.

    resolution 32, 4 blocks (4->8->16->32), one 3x3 main conv plus one
    1x1 torgb conv per block, so 8 conv layers and 8 style slots with
    layer j reading style slot j. Feature channels stay at channel_base
    throughout.
    """

    resolution: int = 32
    blocks: int = 4
    channel_base: int = 32
    latent_dim: int = 64  # content-code width
    z_dim: int = 64
    app_channels: int = 32  # appearance-code channels per encoder pass
    app_spatial: int = 4

    @property
    def num_layers(self) -> int:  # == number of style slots
        return 2 * self.blocks

    def validate(self):
        if self.resolution != 4 * 2 ** (self.blocks - 1):
            raise ConfigError(
                f"toy.resolution {self.resolution} inconsistent with toy.blocks {self.blocks}"
            )


@dataclass
class LossWeights:
    lambda_pixel: float = 1.0
    lambda_perc: float = 0.8
    lambda_id: float = 0.1
    lambda_adv: float = 0.005
    r1_gamma: float = 10.0
    proxy_seed: int = 711

    def validate(self):
        for name in ("lambda_pixel", "lambda_perc", "lambda_id", "lambda_adv", "r1_gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ConfigError(f"loss.{name} must be finite and nonnegative, got {v}")


@dataclass
class HyperConfig:
    D: int = 64  # hidden dimension of the two-matrix mapper
    F: int = 64  # flattened feature-transformer output width
    fusion: str = "fused"  # "fused" (x and initial reconstruction) or "x-only"

    def validate(self):
        if self.fusion not in ("fused", "x-only"):
            raise ConfigError(f"hyper.fusion must be 'fused' or 'x-only', got {self.fusion!r}")
        if self.D < 1 or self.F < 1:
            raise ConfigError("hyper.D and hyper.F must be positive")


@dataclass
class DataConfig:
    kind: str = "self-inversion"  # or "procedural"
    seed: int = 0
    train_size: int = 256
    heldout_size: int = 64

    def validate(self):
        if self.kind not in ("self-inversion", "procedural"):
            raise ConfigError(f"data.kind must be self-inversion or procedural, got {self.kind!r}")
        if self.train_size < 1 or self.heldout_size < 0:
            raise ConfigError("data sizes out of range")


@dataclass
class TrainSchedule:
    seed: int = 0
    lr: float = 1e-4
    batch_warm: int = 8
    batch_adv: int = 4
    warmup_iters: int = 2000
    total_iters: int = 20000
    log_every: int = 50
    checkpoint_every: int = 5000

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")
        if self.warmup_iters > self.total_iters:
            raise ConfigError("train.warmup_iters must not exceed train.total_iters")
        if self.batch_warm < 1 or self.batch_adv < 1:
            raise ConfigError("batch sizes must be positive")


@dataclass
class PretrainConfig:
    iters: int = 1200
    batch: int = 8
    dataset_size: int = 512

    def validate(self):
        if self.iters < 0:
            raise ConfigError("pretrain.iters must be >= 0")


@dataclass
class BenchConfig:
    latent_steps: int = 300
    latent_lr: float = 0.02
    finetune_steps: int = 100
    finetune_lr: float = 1e-3

    def validate(self):
        if self.latent_steps < 1 or self.finetune_steps < 1:
            raise ConfigError("bench step budgets must be positive")


@dataclass
class Config:
    profile: str = "faces-analog"
    train: TrainSchedule = field(default_factory=TrainSchedule)
    loss: LossWeights = field(default_factory=LossWeights)
    toy: ToyDims = field(default_factory=ToyDims)
    hyper: HyperConfig = field(default_factory=HyperConfig)
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    edit_gamma: float = 1.0  # editing magnitude; distinct from loss.r1_gamma

    def validate(self) -> "Config":
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        for section in (self.train, self.loss, self.toy, self.hyper, self.data, self.pretrain, self.bench):
            section.validate()
        return self


PROFILES = {
    "faces-analog": {"lambda_id": 0.1, "lambda_adv": 0.005, "r1_gamma": 10.0},
    "church-analog": {"lambda_id": 0.5, "lambda_adv": 0.15, "r1_gamma": 100.0},
}

_SECTIONS = {
    "train": TrainSchedule,
    "loss": LossWeights,
    "toy": ToyDims,
    "hyper": HyperConfig,
    "data": DataConfig,
    "pretrain": PretrainConfig,
    "bench": BenchConfig,
}

_TOP_KEYS = {"profile": str, "edit.gamma": float}


def _field_types(cls) -> dict[str, type]:
    return {name: f.type for name, f in cls.__dataclass_fields__.items()}


def _coerce(key: str, raw: str, typ):
    typ = {int: int, float: float, str: str, "int": int, "float": float, "str": str}[typ]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line.rstrip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        pairs.append((key, raw))
    return pairs


def apply_pair(cfg: Config, key: str, raw: str) -> Config:
    if key in _TOP_KEYS:
        value = _coerce(key, raw, _TOP_KEYS[key])
        if key == "profile":
            if value not in PROFILES:
                raise ConfigError(f"unknown profile {value!r}")
            return replace(cfg, profile=value, loss=replace(cfg.loss, **PROFILES[value]))
        return replace(cfg, edit_gamma=value)
    if "." not in key:
        raise ConfigError(f"unknown key {key!r}")
    section, name = key.split(".", 1)
    cls = _SECTIONS.get(section)
    if cls is None or name not in _field_types(cls):
        raise ConfigError(f"unknown key {key!r}")
    value = _coerce(key, raw, _field_types(cls)[name])
    return replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})


def parse_config(text: str, base: Config | None = None) -> Config:
    """Parse key=value text. The profile (if any) applies first."""
    cfg = base or Config()
    pairs = parse_pairs(text)
    for key, raw in pairs:
        if key == "profile":
            cfg = apply_pair(cfg, key, raw)
    for key, raw in pairs:
        if key != "profile":
            cfg = apply_pair(cfg, key, raw)
    return cfg.validate()


def load_config(path, base: Config | None = None) -> Config:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), base)


def dump_config(cfg: Config) -> str:
    """Every key with its current value; reparses to an equal config."""
    lines = [f"profile = {cfg.profile}"]
    for section, cls in _SECTIONS.items():
        for name in _field_types(cls):
            lines.append(f"{section}.{name} = {getattr(getattr(cfg, section), name)}")
    lines.append(f"edit.gamma = {cfg.edit_gamma}")
    return "\n".join(lines) + "\n"
