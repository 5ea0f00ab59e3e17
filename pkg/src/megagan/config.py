"""Run configuration files.

Flat ``key = value`` pairs grouped in INI sections::

    [model]
    resolution = 64
    width_multiplier = 0.25
    precision = float32          ; float32 | float64

    [latent]
    dim = 100
    truncation = 1.0             ; default bound for sampling commands
    seed = 0

    [train]
    total_steps = 1000
    alt_interval = 50
    d_loss_band = 1.0
    g_loss_band = 3.0
    guard_window = 25
    learning_rate = 0.0002
    beta1 = 0.5
    beta2 = 0.999
    g_loss_mode = non_saturating ; non_saturating | paper_literal
    schedule_mode = extra_alternation
    seed = 0
    checkpoint_interval = 100
    halt_on_warn = false

    [data]
    path = faces/                ; directory of images, or
    synthetic_images = 64        ; generate a synthetic set instead
    batch_override = 16          ; required outside the 192..1024 schedule

    [run]
    checkpoint_dir = runs/toy
    loss_log = runs/toy/loss.csv ; defaults to <checkpoint_dir>/loss.csv

Every key is optional except ``model.resolution``, ``run.checkpoint_dir`` and
one of ``data.path`` / ``data.synthetic_images``. Unknown sections or keys
are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import batch_size_for
from .errors import ConfigError
from .latent import validate_bound
from .models import DTYPES, resolve_resolution
from .training import TrainConfig


@dataclass
class RunConfig:
    resolution: int
    checkpoint_dir: str
    width_multiplier: float = 1.0
    precision: str = "float32"
    latent_dim: int = 100
    truncation: float = 1.0
    latent_seed: int = 0
    dataset_path: str | None = None
    synthetic_images: int | None = None
    batch_override: int | None = None
    loss_log: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        try:
            resolve_resolution(self.resolution)
        except ConfigError as e:
            raise ConfigError(f"model.resolution: {e}") from None
        if self.width_multiplier <= 0:
            raise ConfigError(f"model.width_multiplier must be > 0 (got {self.width_multiplier})")
        if self.precision not in DTYPES:
            raise ConfigError(f"model.precision must be one of {sorted(DTYPES)} (got {self.precision!r})")
        if self.latent_dim < 1:
            raise ConfigError(f"latent.dim must be >= 1 (got {self.latent_dim})")
        try:
            validate_bound(self.truncation)
        except ConfigError as e:
            raise ConfigError(f"latent.truncation: {e}") from None
        if (self.dataset_path is None) == (self.synthetic_images is None):
            raise ConfigError("data: set exactly one of data.path or data.synthetic_images")
        if self.synthetic_images is not None and self.synthetic_images < 1:
            raise ConfigError(f"data.synthetic_images must be >= 1 (got {self.synthetic_images})")
        try:
            self.train.batch_size = batch_size_for(self.resolution, override=self.batch_override)
        except ConfigError as e:
            raise ConfigError(f"data.batch_override: {e}") from None
        self.train.validate()

    @property
    def loss_log_path(self) -> Path:
        return Path(self.loss_log) if self.loss_log else Path(self.checkpoint_dir) / "loss.csv"

    def snapshot(self) -> dict:
        return {
            "model": {"resolution": self.resolution, "width_multiplier": self.width_multiplier, "precision": self.precision},
            "latent": {"dim": self.latent_dim, "truncation": self.truncation, "seed": self.latent_seed},
            "data": {"path": self.dataset_path, "synthetic_images": self.synthetic_images, "batch_override": self.batch_override},
            "run": {"checkpoint_dir": self.checkpoint_dir, "loss_log": self.loss_log},
            "train": self.train.to_dict(),
        }


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_CASTS = {"int": int, "float": float, "str": str, "bool": _bool}

_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "model": {"resolution": ("resolution", int), "width_multiplier": ("width_multiplier", float), "precision": ("precision", str)},
    "latent": {"dim": ("latent_dim", int), "truncation": ("truncation", float), "seed": ("latent_seed", int)},
    "data": {"path": ("dataset_path", str), "synthetic_images": ("synthetic_images", int), "batch_override": ("batch_override", int)},
    "run": {"checkpoint_dir": ("checkpoint_dir", str), "loss_log": ("loss_log", str)},
}
# batch size is derived from the schedule, never set directly
_TRAIN_KEYS = {k: _CASTS[t] for k, t in _TRAIN_TYPES.items() if k != "batch_size"}


def parse_run_config(text: str, base_dir: str | Path | None = None) -> RunConfig:
    """Parse and validate config text; relative paths resolve against ``base_dir``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax error: {e}") from None
    values: dict = {}
    train: dict = {}
    for section in cp.sections():
        if section == "train":
            known = _TRAIN_KEYS
        elif section in _SCHEMA:
            known = {k: cast for k, (_, cast) in _SCHEMA[section].items()}
        else:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in known:
                raise ConfigError(f"unknown config key {section}.{key}")
            try:
                val = known[key](raw.strip())
            except ValueError:
                raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {known[key].__name__}") from None
            if section == "train":
                train[key] = val
            else:
                values[_SCHEMA[section][key][0]] = val
    for required, name in (("resolution", "model.resolution"), ("checkpoint_dir", "run.checkpoint_dir")):
        if required not in values:
            raise ConfigError(f"missing required config key {name}")
    if base_dir is not None:
        for key in ("dataset_path", "checkpoint_dir", "loss_log"):
            if values.get(key) is not None and not Path(values[key]).is_absolute():
                values[key] = str(Path(base_dir) / values[key])
    cfg = RunConfig(train=TrainConfig(**train), **values)
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_run_config(text, base_dir=path.parent)
