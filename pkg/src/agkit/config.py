"""Run configuration: line-oriented ``key = value`` files with ``#`` comments.
Unknown keys are rejected with their line number; every field has a default."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    """Bad config file or config/checkpoint usage error (CLI exit code 2)."""


@dataclass
class RunConfig:
    # run identity
    task: str = "seg"  # seg | cls
    model: str = "gated"  # gated | baseline
    seed: int = 0
    out_dir: str = "runs/out"
    # optimization
    epochs: int = 12
    batch_size: int = 8
    optimizer: str = "adam"  # adam | sgd-nesterov
    lr: float = 2e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    use_schedule: bool = False
    aux_weight: float = 0.5
    # dataset
    height: int = 32
    width: int = 32
    train_count: int = 200
    val_count: int = 50
    test_count: int = 50
    contrast: float = 0.25
    classes: int = 3
    n_fg_classes: int = 4
    background_ratio: float = 0.8
    spacing: float = 1.0
    # segmentation network
    depth: int = 3
    base_filters: int = 8
    deep_supervision: bool = True
    # classifier network
    n_stages: int = 4
    base_width: int = 8
    gated_stages: tuple[int, ...] = (2, 3)
    aggregation: str = "concat-fc"
    # gates
    sub_gates: int = 1
    gate_normalization: str = ""  # empty = task default (sigmoid seg, min-shift cls)
    gate_resample: str = "up-to-x"
    # localization / export
    tau: float = 0.6
    blur: float = 1.5
    export_count: int = 4

    def __post_init__(self):
        if self.task not in ("seg", "cls"):
            raise ConfigError(f"task must be seg or cls, got {self.task!r}")
        if self.model not in ("gated", "baseline"):
            raise ConfigError(f"model must be gated or baseline, got {self.model!r}")

    def norm_for_task(self) -> str:
        if self.gate_normalization:
            return self.gate_normalization
        return "sigmoid" if self.task == "seg" else "min-shift"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str, lineno: int):
    f = _FIELDS[key]
    base = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if base in ("int",):
            return int(raw)
        if base in ("float",):
            return float(raw)
        if base in ("bool",):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if base.startswith("tuple"):
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as e:
        raise ConfigError(f"line {lineno}: bad value for {key!r}: {e}") from e


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, lineno)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
