from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np


class EnvUsageError(RuntimeError):
    """Raised when an environment is driven outside its contract."""


@dataclass(frozen=True)
class EnvState:
    agent_pos: tuple[int, int]
    object_alive: tuple[bool, ...]
    step_count: int
    terminal: bool
    object_positions: tuple[tuple[int, int], ...] = ()


class VecEnv(Protocol):
    """Batch of independent environments with auto-reset on episode end."""

    n_envs: int
    obs_dim: int
    n_actions: int

    def reset(self) -> np.ndarray: ...

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns ``(next_obs, rewards, dones)``; ``next_obs`` rows of finished
        episodes already belong to the freshly reset episode."""
        ...


class EnvSpec(Protocol):
    """Picklable recipe for a task's environment batch."""

    def make(self, n_envs: int, seed: int) -> VecEnv: ...

    def return_bounds(self) -> tuple[float, float]: ...
