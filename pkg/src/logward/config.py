"""Service configuration: one JSON file, validated into a dataclass."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .models.training import TrainConfig
from .parsing import get_profile


class ConfigError(ValueError):
    pass


_SINK_TYPES = {"file", "webhook", "null"}


@dataclass
class ServiceConfig:
    data_dir: str = "./logward-data"
    profile: str = "raw"
    # parser knobs
    depth: int = 4
    similarity_threshold: float = 0.4
    max_children: int = 100
    partitions: int = 1
    # feature / fusion knobs
    tau: float = 0.01
    embed_dim: int = 50
    # consolidation strength for anchors and retrains
    lam: float = 10.0
    replay_ratio: float = 2.0
    val_fraction: float = 0.2
    # orchestration / serving
    workers: int = 2
    page_size: int = 50
    host: str = "127.0.0.1"
    port: int = 8080
    # optimizer settings, passed through to TrainConfig
    train: dict = field(
        default_factory=lambda: {"learning_rate": 1e-3, "epochs": 30, "batch_size": 64, "seed": 0}
    )
    retrain: dict = field(
        default_factory=lambda: {"learning_rate": 1e-3, "epochs": 40, "batch_size": 16, "seed": 0}
    )
    sink: dict = field(default_factory=lambda: {"type": "file"})

    def __post_init__(self):
        if not self.data_dir:
            raise ConfigError("data_dir must be non-empty")
        if self.depth < 2:
            raise ConfigError("depth must be >= 2")
        if not 0.0 < self.similarity_threshold < 1.0:
            raise ConfigError("similarity_threshold must be in (0, 1)")
        if self.max_children < 1:
            raise ConfigError("max_children must be >= 1")
        if self.partitions < 1:
            raise ConfigError("partitions must be >= 1")
        if not 0.0 <= self.tau < 1.0:
            raise ConfigError("tau must be in [0, 1)")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.replay_ratio < 0:
            raise ConfigError("replay_ratio must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.page_size < 1:
            raise ConfigError("page_size must be >= 1")
        if not 1 <= self.port <= 65535:
            raise ConfigError("port must be in [1, 65535]")
        if self.sink.get("type") not in _SINK_TYPES:
            raise ConfigError(f"sink.type must be one of {sorted(_SINK_TYPES)}")
        try:
            get_profile(self.profile)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        # fail now, not at first training call
        self.train_config()
        self.retrain_config()

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad train settings: {exc}") from None

    def retrain_config(self) -> TrainConfig:
        try:
            return TrainConfig(**self.retrain)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad retrain settings: {exc}") from None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path: str) -> ServiceConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    return ServiceConfig.from_dict(payload)


def save_config(config: ServiceConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")
