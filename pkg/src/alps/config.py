"""Plain-text ``key = value`` configuration files.

One setting per line, ``#`` starts a comment.  Sequences are comma separated.
Unknown keys are rejected; required keys missing from a file are reported by
name.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from alps.errors import ConfigError
from alps.models import ModelConfig

VARIANTS = ("plain", "perturbed", "mean")


@dataclass
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 32
    lr_ae: float = 1e-3
    lr_distorter: float = 1e-3
    n_distorter_every: int = 3
    w_ae: float = 1.0
    w_dist: float = 0.5
    seed: int = 42
    delta_max: float = 1.0
    latent_dim: int = 64
    resolution: int = 32
    val_inliers: int = 150
    val_outliers: int = 150
    select_metric: str = "val_auroc"
    selection_variant: str = "mean"
    optimizer: str = "adam"
    encoder_channels: tuple[int, ...] = (32, 64, 128)
    decoder_channels: tuple[int, ...] = (128, 64, 32, 16, 8, 4)
    distorter_channels: tuple[int, ...] = (32, 64, 128, 128)
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_distorter_every < 1:
            raise ConfigError("n_distorter_every must be >= 1")
        if self.lr_ae <= 0 or self.lr_distorter <= 0:
            raise ConfigError("learning rates must be positive")
        if not self.w_ae >= self.w_dist > 0:
            raise ConfigError(f"loss weights must satisfy w_ae >= w_dist > 0, got w_ae={self.w_ae}, w_dist={self.w_dist}")
        if self.select_metric != "val_auroc":
            raise ConfigError(f"unsupported select_metric {self.select_metric!r}")
        if self.selection_variant not in VARIANTS:
            raise ConfigError(f"selection_variant must be one of {VARIANTS}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.val_inliers < 0 or self.val_outliers < 0:
            raise ConfigError("validation counts must be non-negative")
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.latent_dim, self.delta_max, self.resolution, tuple(self.encoder_channels),
                           tuple(self.decoder_channels), tuple(self.distorter_channels), self.leaky_slope)

    def replace(self, **changes) -> TrainingConfig:
        return dataclasses.replace(self, **changes)


@dataclass
class RunConfig:
    """A training run: hyperparameters plus where the data comes from.

    ``dataset`` is one of ``synthetic`` (blobs generated in memory), ``idx``
    (train/test IDX files), ``frames`` (directory of normal PGM frames, cut
    into patches) or ``patches`` (directory of pre-curated PGM patches).
    """

    training: TrainingConfig = field(default_factory=TrainingConfig)
    dataset: str = "synthetic"
    inlier_class: int | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    frames_dir: str | None = None
    patch_dir: str | None = None
    patch_size: int = 30
    synthetic_inliers: int = 2150
    synthetic_outliers: int = 300
    max_train: int | None = None


_RUN_KEYS = [f.name for f in fields(RunConfig) if f.name != "training"]
_TRAIN_KEYS = [f.name for f in fields(TrainingConfig)]
REQUIRED_KEYS = ("dataset",)
DATASETS = ("synthetic", "idx", "frames", "patches")


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _coerce(name: str, annotation: Any, raw: str):
    ann = str(annotation)
    try:
        if raw.lower() in ("", "none") and "None" in ann:
            return None
        if ann.startswith("tuple"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if ann.startswith("int"):
            return int(raw)
        if ann.startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from None


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def training_from_mapping(values: dict[str, str]) -> TrainingConfig:
    unknown = sorted(set(values) - set(_TRAIN_KEYS))
    if unknown:
        raise ConfigError(f"unknown training keys: {', '.join(unknown)}")
    kwargs = {f.name: _coerce(f.name, f.type, values[f.name]) for f in fields(TrainingConfig) if f.name in values}
    return TrainingConfig(**kwargs)


def training_to_text(config: TrainingConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(config, f.name))}\n" for f in fields(TrainingConfig))


def run_from_mapping(values: dict[str, str]) -> RunConfig:
    unknown = sorted(set(values) - set(_RUN_KEYS) - set(_TRAIN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    training = training_from_mapping({k: v for k, v in values.items() if k in _TRAIN_KEYS})
    kwargs = {f.name: _coerce(f.name, f.type, values[f.name])
              for f in fields(RunConfig) if f.name in values and f.name != "training"}
    run = RunConfig(training=training, **kwargs)
    if run.dataset not in DATASETS:
        raise ConfigError(f"dataset must be one of {DATASETS}, got {run.dataset!r}")
    need = {"synthetic": ["inlier_class"], "idx": ["inlier_class", "train_images", "train_labels"],
            "frames": ["frames_dir"], "patches": ["patch_dir"]}[run.dataset]
    missing = [k for k in need if getattr(run, k) is None]
    if missing:
        raise ConfigError(f"dataset={run.dataset} requires keys: {', '.join(missing)}")
    return run


def load_run_config(path: str | os.PathLike, seed_override: int | None = None) -> RunConfig:
    """Read a run config.  Seed precedence: ``seed_override`` > ``$ALPS_SEED`` > file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    values = parse_text(text, str(path))
    env_seed = os.environ.get("ALPS_SEED")
    if seed_override is not None:
        values["seed"] = str(seed_override)
    elif env_seed:
        values["seed"] = env_seed
    return run_from_mapping(values)


def run_to_text(run: RunConfig) -> str:
    lines = [f"{k} = {_format(getattr(run, k))}\n" for k in _RUN_KEYS]
    return "".join(lines) + training_to_text(run.training)
