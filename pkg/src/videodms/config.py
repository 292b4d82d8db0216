"""Strict JSON run configuration.

One file with sections {model, loss, train, synth, preprocess}; every
section and key is optional, missing keys get the library defaults, and
unknown keys are rejected rather than silently ignored.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .losses import LossConfig
from .model import ModelConfig
from .preprocess import (ConfigurationError, FilterSpec, RegionIndices,
                         WindowSpec)
from .synth import SynthConfig
from .train import TrainConfig


@dataclass
class PreprocessConfig:
    window: WindowSpec = field(default_factory=WindowSpec)
    regions: RegionIndices = field(default_factory=RegionIndices)
    filter: FilterSpec = field(default_factory=FilterSpec)
    fps: float = 30.0

    def __post_init__(self):
        if self.fps <= 0:
            raise ConfigurationError(f"fps must be positive, got {self.fps}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)


def _build(dc_cls, data, path: str):
    """Instantiate a dataclass from a dict, rejecting unknown keys and
    recursing into dataclass-typed fields."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"config section {path!r} must be an object")
    by_name = {f.name: f for f in dataclasses.fields(dc_cls)}
    unknown = set(data) - set(by_name)
    if unknown:
        raise ConfigurationError(
            f"unknown config key(s) {sorted(unknown)} in {path!r}; "
            f"known keys: {sorted(by_name)}")
    kwargs = {}
    for key, value in data.items():
        f = by_name[key]
        sub_cls = _nested_dataclass(dc_cls, f.name)
        if sub_cls is not None and isinstance(value, dict):
            value = _build(sub_cls, value, f"{path}.{key}")
        kwargs[key] = value
    return dc_cls(**kwargs)


def _nested_dataclass(dc_cls, field_name: str):
    defaults = dc_cls()
    current = getattr(defaults, field_name)
    return type(current) if dataclasses.is_dataclass(current) else None


_SECTIONS = {
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
    "preprocess": PreprocessConfig,
}


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("top-level config must be a JSON object")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(
            f"unknown config section(s) {sorted(unknown)}; "
            f"known sections: {sorted(_SECTIONS)}")
    kwargs = {name: _build(cls, data.get(name, {}), name)
              for name, cls in _SECTIONS.items()}
    return RunConfig(**kwargs)


def load_run_config(path=None) -> RunConfig:
    """Parse a JSON config file; None means all defaults."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config {path} is not valid JSON: {e}") from e
    return run_config_from_dict(data)


def echo_config(config: RunConfig, out_dir) -> Path:
    """Write the fully resolved config next to a command's outputs so the
    exact run can be repeated."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    path.write_text(json.dumps(asdict(config), indent=1) + "\n")
    return path
