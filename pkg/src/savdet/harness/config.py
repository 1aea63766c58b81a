"""Run configuration: flat key = value text files, defaults, and a stable hash
stamped into every artifact so mixed-provenance outputs can be rejected."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigError

CALIBRATION_MODES = ("transductive", "frozen")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # visual branches
    encoder_kind: str = "tiny_conv"
    input_size: int = 64
    feature_dim: int = 32
    visual_lr: float = 1e-2
    visual_batch: int = 16
    visual_steps: int = 100
    # mask deformation
    elastic_amplitude: float = 4.0
    elastic_scale: float = 16.0
    # sync branch
    sync_hidden: int = 64
    sync_lr: float = 1e-2
    sync_clips: int = 4
    sync_steps: int = 100
    window_radius: int = 15
    # scoring / fusion
    max_frames: int = 8
    calibration_mode: str = "transductive"
    epsilon: float = 1e-3
    threshold: float = 0.5

    def __post_init__(self):
        if self.calibration_mode not in CALIBRATION_MODES:
            raise ConfigError(f"calibration_mode must be one of {CALIBRATION_MODES}")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError("threshold must be in (0, 1)")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def serialize(config: RunConfig) -> str:
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    return "\n".join(lines) + "\n"


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(serialize(config).encode()).hexdigest()[:12]


def save(config: RunConfig, path) -> None:
    Path(path).write_text(serialize(config))


def load(path) -> RunConfig:
    values = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _TYPES:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        kind = _TYPES[key]
        try:
            if kind == "int":
                values[key] = int(raw)
            elif kind == "float":
                values[key] = float(raw)
            else:
                values[key] = raw
        except ValueError as exc:
            raise ConfigError(f"{path}:{ln}: bad value for {key}: {exc}") from exc
    return RunConfig(**values)
