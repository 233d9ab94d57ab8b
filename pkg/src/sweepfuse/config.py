"""Run configuration with paper defaults and JSON round-tripping."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .errors import ConfigError
from .geometry import DepthRange


@dataclass
class PyramidConfig:
    levels: int = 3
    eta: float = 2.0

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError(f"pyramid needs at least one level, got {self.levels}")
        if not self.eta > 1:
            raise ConfigError(f"pyramid scale factor must exceed 1, got {self.eta}")


@dataclass
class MultiMetricParams:
    eps_low: float = 0.5
    eps_high: float = 0.9
    tau1: float = 1.0
    tau2: float = 0.01
    min_consistent_views: int = 3

    def __post_init__(self):
        if not 0 <= self.eps_low < self.eps_high <= 1:
            raise ConfigError(f"need 0 <= eps_low < eps_high <= 1, got {self.eps_low}, {self.eps_high}")
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise ConfigError("tau1 and tau2 must be positive")
        if self.min_consistent_views < 0:
            raise ConfigError("min_consistent_views must be non-negative")


@dataclass
class TrainConfig:
    lr: float = 0.001
    decay: float = 0.9
    epochs: int = 16
    batch: int = 1
    max_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0 or not 0 < self.decay <= 1:
            raise ConfigError("learning rate must be >= 0 and decay in (0, 1]")
        if self.epochs < 1:
            raise ConfigError("need at least one epoch")
        if self.batch != 1:
            raise ConfigError("only batch size 1 is supported")


@dataclass
class RunConfig:
    views_train: int = 5
    views_test: int = 7
    depth_range: DepthRange = field(default_factory=lambda: DepthRange(425.0, 935.0, 192))
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    multimetric: MultiMetricParams = field(default_factory=MultiMetricParams)
    mode: str = "voxelwise"
    checkpoint: str | None = None
    fusion_conf: float = 0.9
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.views_train < 2 or self.views_test < 2:
            raise ConfigError("view counts must be at least 2")
        if self.mode not in ("pixelwise", "voxelwise", "photometric"):
            raise ConfigError(f"unknown aggregation mode {self.mode!r}")
        if not 0 <= self.fusion_conf <= 1:
            raise ConfigError("fusion confidence threshold must lie in [0, 1]")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_NESTED = {
    "depth_range": DepthRange,
    "pyramid": PyramidConfig,
    "multimetric": MultiMetricParams,
    "train": TrainConfig,
}


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(key) if cls is RunConfig else None
        kwargs[key] = _build(sub, value) if sub is not None and not is_dataclass(value) else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(config.to_json() + "\n")


def resolve_seed(seed: int) -> int:
    """``SWEEPFUSE_SEED`` overrides any configured seed."""
    env = os.environ.get("SWEEPFUSE_SEED")
    if env is None or env == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"SWEEPFUSE_SEED must be an integer, got {env!r}") from None
