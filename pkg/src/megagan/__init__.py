"""Resolution-scalable DCGAN built on a small numpy autodiff core."""

from .errors import ConfigError, GanError, NumericError
from .latent import LatentSpec, compare_truncation, emit_grid, sample_latent
from .models import Network, NetworkSpec, build_discriminator, build_generator, init_params
from .training import TrainConfig, TrainState, plan_step, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "GanError",
    "LatentSpec",
    "Network",
    "NetworkSpec",
    "NumericError",
    "TrainConfig",
    "TrainState",
    "build_discriminator",
    "build_generator",
    "compare_truncation",
    "emit_grid",
    "init_params",
    "plan_step",
    "sample_latent",
    "train",
]
