"""Run configuration and its ``key = value`` file format."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

CACHE_CHOICES = ("f1", "f2", "f3", "f4", "f5", "f6", "off")


@dataclass
class TrainConfig:
    d: int = 200
    emb: int = 100
    epochs: int = 30
    lr0: float = 0.5
    # multiplied into the learning rate after every epoch
    lr_decay: float = 0.5
    init_scale: float = 1.0
    seed: int = 0
    cache_fn: str = "f1"
    # apply the reset gate on top of f6 as well (f6 already mixes with z_t)
    double_gate: bool = True
    # global gradient-norm clip; 0 disables
    clip: float = 5.0
    max_len: int = 100

    def __post_init__(self):
        if self.d <= 0 or self.emb <= 0:
            raise ValueError("d and emb must be positive")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.cache_fn not in CACHE_CHOICES:
            raise ValueError(f"cache_fn must be one of {CACHE_CHOICES}, got {self.cache_fn!r}")

    def learning_rate(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay ** epoch

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _coerce(kind, text: str):
    if kind in (bool, "bool"):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text.strip()


def parse_overrides(items: dict[str, str]) -> dict:
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for key, value in items.items():
        key = key.replace("-", "_")
        if key not in types:
            raise KeyError(f"unknown config key {key!r}")
        out[key] = _coerce(types[key], value)
    return out


def read_config(path, base: TrainConfig | None = None) -> TrainConfig:
    raw = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return dataclasses.replace(base or TrainConfig(), **parse_overrides(raw))


def write_config(config: TrainConfig, path) -> None:
    lines = [f"{k} = {v}" for k, v in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
