"""Run configuration: TOML files with sections plus dotted overrides."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .envs import EnvSpec
from .losses import SELECTORS, LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSettings:
    seed: int = 0
    utd_ratio: int = 1
    batch_size: int = 64
    total_steps: int = 20_000
    warmup_steps: int = 500
    selector: str = "r2r2"
    checkpoints: int = 50
    eval_episodes: int = 20
    monitor_every: int = 0
    """Decision steps between effective-rank records; 0 means 1% of the run."""
    buffer_capacity: int = 100_000
    q_lr: float = 0.05
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5


@dataclass(frozen=True)
class NetSettings:
    latent_dim: int = 8
    hidden: int = 64
    encoder_layers: int = 2
    predictor_layers: int = 2
    activation: str = "tanh"
    init_scale: float = 1.0
    lr_init: float = 3e-4
    lr_end: float = 5e-5
    normalize_latent: bool = False


@dataclass(frozen=True)
class RunConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    losses: LossWeights = field(default_factory=LossWeights)
    train: TrainSettings = field(default_factory=TrainSettings)
    net: NetSettings = field(default_factory=NetSettings)

    def __post_init__(self):
        t = self.train
        if t.utd_ratio < 1:
            raise ConfigError("train.utd_ratio must be >= 1")
        if t.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2")
        if t.checkpoints < 2:
            raise ConfigError("train.checkpoints must be >= 2")
        if t.total_steps < t.checkpoints:
            raise ConfigError("train.total_steps must be at least train.checkpoints")
        if t.selector not in SELECTORS:
            raise ConfigError(f"train.selector must be one of {SELECTORS}, got {t.selector!r}")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()


_SECTIONS = {"env": EnvSpec, "losses": LossWeights, "train": TrainSettings, "net": NetSettings}


def _coerce(section: str, cls, key: str, value):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ConfigError(f"unknown key {section}.{key}")
    kind = types[key]
    try:
        if kind == "bool":
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if not isinstance(value, str):
            raise TypeError
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: expected {kind}, got {value!r}") from None


def config_from_dict(data: dict) -> RunConfig:
    parts = {}
    for section, values in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        cls = _SECTIONS[section]
        kwargs = {k: _coerce(section, cls, k, v) for k, v in values.items()}
        try:
            parts[section] = cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return RunConfig(**parts)


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    return config_from_dict(data)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def _parse_scalar(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(config: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` strings; values use TOML scalar syntax."""
    data = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) != 2 or parts[0] not in data or parts[1] not in data[parts[0]]:
            raise ConfigError(f"override references unknown key {dotted.strip()!r}")
        data[parts[0]][parts[1]] = _parse_scalar(raw.strip())
    return config_from_dict(data)
