"""Run configuration and the line-oriented ``key=value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from contea.errors import ConfigError

MODES = ("full", "no_ta", "no_ta_no_asa", "retrain")
METRICS = ("csls", "cosine")


@dataclass(frozen=True)
class RunConfig:
    """All hyperparameters of a run.

    ``lam`` is the alignment margin (``lambda`` is a Python keyword; the
    config file accepts either spelling).
    """

    dim: int = 100
    alpha: float = 0.1
    beta: float = 0.1
    m: int = 500
    gamma: float = 15.0
    lam: float = 0.5
    proxy_count: int = 64
    csls_k: int = 10
    metric: str = "csls"
    batch_size: int = 512
    lr: float = 1e-3
    epochs: int = 2000
    finetune_epochs: int = 30
    eval_every: int = 5
    patience: int = 5
    seed: int = 0
    mode: str = "full"
    threads: int = 1

    def __post_init__(self):
        positive = ("dim", "proxy_count", "csls_k", "batch_size", "eval_every", "threads")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.dim < 2:
            raise ConfigError("dim must be >= 2")
        for name in ("alpha", "beta", "m", "epochs", "finetune_epochs", "patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.gamma <= 0:
            raise ConfigError("gamma must be > 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; expected one of {METRICS}")

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def with_overrides(self, items) -> RunConfig:
        """Apply ``key=value`` strings (or a mapping of raw strings)."""
        if isinstance(items, dict):
            items = [f"{k}={v}" for k, v in items.items()]
        changes = {}
        for item in items:
            key, value = _split_item(item)
            changes[key] = _coerce(key, value)
        return self.replace(**changes)

    @classmethod
    def from_file(cls, path, base: RunConfig | None = None) -> RunConfig:
        base = base or cls()
        items = []
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for line_no, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            items.append(line)
        return base.with_overrides(items)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _split_item(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    key = key.strip()
    if key == "lambda":
        key = "lam"
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    return key, value.strip()


def _coerce(key: str, value: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"config key {key!r} expects {kind}, got {value!r}") from None
    return value
