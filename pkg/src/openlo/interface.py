"""Contract between the PPO training loop and any optimizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np


@dataclass(frozen=True)
class PpoSignals:
    """Training-loop context passed to the optimizer on every update."""

    t: int
    tp: float
    bp: float
    dormancy: np.ndarray | None = None  # per parameter, tiled from downstream neurons
    layer_prop: np.ndarray | None = None


@dataclass
class UpdateInfo:
    """What an optimizer applied this step (``p <- p - update``).

    ``raw`` is the deterministic first-stage update (before noise and
    zero-meaning). ``delta``/``noise`` are the learned stochasticity weight and
    the sampled Gaussian noise; ``noise_term`` is their scaled, masked product.
    """

    update: np.ndarray
    raw: np.ndarray
    delta: np.ndarray | None = None
    noise: np.ndarray | None = None
    noise_term: np.ndarray | None = None


class Optimizer(Protocol):
    needs_dormancy: bool

    def init(self, params) -> Any: ...

    def step(self, state, grad: np.ndarray, params, signals: PpoSignals, rng: np.random.Generator):
        """Returns ``(new_params, new_state, UpdateInfo)``."""
        ...
