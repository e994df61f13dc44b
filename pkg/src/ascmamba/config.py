"""Run configuration: JSON file, strict schema (unknown keys are errors).

Example::

    {
      "seed": 0,
      "paths": {"pretrain_manifest": "pretrain.csv", "dev_manifest": "dev.csv",
                "valid_manifest": "valid.csv", "audio_root": "audio", "run_dir": "run"},
      "features": {"sample_rate": 8000, "clip_seconds": 0.4, "n_fft": 512, "n_mels": 8},
      "model": {"channels": 4, "n_blocks": 1, "d_state": 4},
      "train": {"learning_rate": 0.001, "batch_size": 4},
      "stage_epochs": {"pretrain": 20, "finetune": 20, "setrans": 40, "final": 20},
      "condition_policy": "with"
    }

Relative paths resolve against the config file's directory.  ``setrans.n_mels``
defaults to ``features.n_mels``; ``model.dropout`` and ``setrans.dropout``
default to ``train.dropout``.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass
from pathlib import Path

from .data import INDOOR
from .evalkit import PerturbConfig, SplitConfig
from .features import FeatureConfig
from .model import ASCMambaConfig
from .setrans import ScenePartition, SETransConfig
from .training import TrainConfig

__all__ = ["ConfigError", "PathsConfig", "StageEpochs", "PseudoConfig", "PartitionConfig",
           "RunConfig", "config_from_dict", "load_config", "config_to_dict"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    dev_manifest: str
    audio_root: str
    run_dir: str
    pretrain_manifest: str | None = None
    valid_manifest: str | None = None
    feature_cache: str | None = None


@dataclass(frozen=True)
class StageEpochs:
    pretrain: int = 10
    finetune: int = 10
    setrans: int = 10
    final: int = 10


@dataclass(frozen=True)
class PseudoConfig:
    ratio: float = 0.9
    per_class_selection: bool = False

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError("pseudo.ratio must lie in (0, 1]")


@dataclass(frozen=True)
class PartitionConfig:
    indoor: tuple = INDOOR
    outdoor: tuple | None = None

    def build(self) -> ScenePartition:
        return ScenePartition.from_names(self.indoor, self.outdoor)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    paths: PathsConfig
    features: FeatureConfig = FeatureConfig()
    model: ASCMambaConfig = ASCMambaConfig()
    setrans: SETransConfig = SETransConfig()
    train: TrainConfig = TrainConfig()
    stage_epochs: StageEpochs = StageEpochs()
    pseudo: PseudoConfig = PseudoConfig()
    partition: PartitionConfig = PartitionConfig()
    split: SplitConfig = SplitConfig()
    perturb: PerturbConfig = PerturbConfig()
    condition_policy: str = "with"

    def __post_init__(self):
        if self.condition_policy not in ("with", "without"):
            raise ValueError("condition_policy must be 'with' or 'without'")

    @property
    def use_conditions(self) -> bool:
        return self.condition_policy == "with"

    def validate_paths(self) -> None:
        p = self.paths
        for name in ("dev_manifest", "audio_root", "pretrain_manifest", "valid_manifest"):
            value = getattr(p, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"paths.{name} does not exist: {value}")


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, f"{where}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict, base_dir=None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "seed" not in data:
        raise ConfigError("config: 'seed' is mandatory")
    if "paths" not in data:
        raise ConfigError("config: 'paths' is mandatory")
    cfg = _build(RunConfig, data, "config")
    base = Path(base_dir) if base_dir is not None else None
    if base is not None:
        resolved = {k: (str(base / v) if v is not None and not Path(v).is_absolute() else v)
                    for k, v in dataclasses.asdict(cfg.paths).items()}
        cfg = dataclasses.replace(cfg, paths=PathsConfig(**resolved))
    train_dropout = cfg.train.dropout
    if "n_mels" not in data.get("setrans", {}):
        cfg = dataclasses.replace(cfg, setrans=dataclasses.replace(cfg.setrans, n_mels=cfg.features.n_mels))
    if "dropout" not in data.get("setrans", {}):
        cfg = dataclasses.replace(cfg, setrans=dataclasses.replace(cfg.setrans, dropout=train_dropout))
    if "dropout" not in data.get("model", {}):
        cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, dropout=train_dropout))
    if cfg.setrans.n_mels != cfg.features.n_mels:
        raise ConfigError(f"setrans.n_mels={cfg.setrans.n_mels} but features.n_mels={cfg.features.n_mels}")
    try:
        cfg.partition.build()
    except ValueError as exc:
        raise ConfigError(f"config.partition: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, path.parent)


def config_to_dict(cfg: RunConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))
