"""Learned optimizers for reinforcement learning, meta-trained with evolution strategies."""

from openlo.errors import ConfigError, TrainingDiverged

__version__ = "0.1.0"

__all__ = ["ConfigError", "TrainingDiverged", "__version__"]
