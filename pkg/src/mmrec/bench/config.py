"""Flat ``key=value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    folds: str = "S4"  # held-out splits, comma separated; each trains its own models
    epochs: int = 30
    batch_size: int = 8
    rgb_learning_rate: float = 0.05
    skeleton_learning_rate: float = 0.1
    l2_lambda: float = 1e-4
    hidden_size: int = 32
    fc_size: int = 32
    window_len: int = 256
    overlap: int = 128
    alpha: float = 0.5
    svm_epochs: int = 2000
    svm_learning_rate: float = 0.01
    svm_lambda: float = 0.001
    audio: bool = True
    audio_epochs: int = 200
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.epochs < 0 or self.svm_epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.overlap < self.window_len:
            raise ConfigError("overlap must lie in [0, window_len)")
        if not self.fold_list:
            raise ConfigError("folds must name at least one split")

    @property
    def fold_list(self):
        return [f.strip() for f in self.folds.split(",") if f.strip()]

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n"
                       for f in dataclasses.fields(self))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _cast(field_type, raw, key):
    try:
        if field_type in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if field_type in (int, "int"):
            return int(raw)
        if field_type in (float, "float"):
            return float(raw)
        if field_type in ("tuple",):
            return tuple(int(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_key_values(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build(cls, values: dict, strict=True):
    """Instantiate dataclass ``cls`` from string values; unknown keys are an error
    when ``strict``."""
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    unknown = set(values) - set(fields)
    if strict and unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: _cast(fields[k], v, k) if isinstance(v, str) else v
              for k, v in values.items() if k in fields}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path, cls=ExperimentConfig, strict=True):
    return build(cls, parse_key_values(Path(path).read_text()), strict)
