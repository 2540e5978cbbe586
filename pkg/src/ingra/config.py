"""Model/training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    num_variables: int
    target_index: int = 0
    window_length: int = 10
    hidden_size: int = 16
    num_prototypes: int = 3
    alpha: float = 0.5
    tau: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 0.1
    gamma: float = 0.5
    batch_size: int = 32
    learning_rate: float = 0.01
    pretrain_epochs: int = 5
    train_epochs: int = 50
    seed: int = 0
    # offset between consecutive training windows; evaluation always uses 1
    train_stride: int = 1
    # z-score every series of an individual before windowing
    standardize: bool = True

    def __post_init__(self):
        if self.num_variables < 2:
            raise ConfigError("num_variables must be >= 2")
        if not 0 <= self.target_index < self.num_variables:
            raise ConfigError("target_index must lie in [0, num_variables)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.num_prototypes < 1:
            raise ConfigError("num_prototypes must be >= 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        for name in ("window_length", "hidden_size", "batch_size", "train_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.pretrain_epochs < 0 or self.train_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(k, v) for k, v in values.items()})


_INT_KEYS = {f.name for f in fields(ModelConfig) if f.type in ("int", int)}
_BOOL_KEYS = {f.name for f in fields(ModelConfig) if f.type in ("bool", bool)}
_TRUTHY = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def _coerce(key: str, value):
    if key in _BOOL_KEYS:
        if isinstance(value, bool):
            return value
        if str(value).strip().lower() in _TRUTHY:
            return _TRUTHY[str(value).strip().lower()]
        raise ConfigError(f"bad value for {key}: {value!r}")
    try:
        if key in _INT_KEYS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def write_config_file(config: ModelConfig, path: str | Path) -> None:
    lines = [f"{k} = {str(v).lower()}" if isinstance(v, bool)
             else f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}"
             for k, v in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
