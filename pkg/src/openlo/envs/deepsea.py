"""Deep Sea: an N x N exploration benchmark.

The agent starts in the top-left cell and descends one row per step. Going
right costs ``move_penalty``; only an unbroken run of N rights reaches the
bottom-right cell and collects ``goal_reward`` on the final move. Each row
randomly swaps which raw action means "right".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from openlo import rng as rngmod
from openlo.envs.base import EnvState
from openlo.errors import ConfigError

LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class DeepSeaParams:
    size: int
    move_penalty: float
    goal_reward: float
    action_flip_mask: tuple[bool, ...]

    def __post_init__(self):
        if self.size < 2:
            raise ConfigError(f"deep sea size must be >= 2, got {self.size}", "env.size")
        if len(self.action_flip_mask) != self.size:
            raise ValueError("action_flip_mask needs one entry per row")

    @property
    def obs_dim(self) -> int:
        return self.size * self.size

    def return_bounds(self) -> tuple[float, float]:
        worst = -self.size * self.move_penalty
        return worst, self.goal_reward + worst


def make_deepsea_params(size: int, seed: int, randomize: bool = True) -> DeepSeaParams:
    if randomize:
        flips = rngmod.stream(seed, "deepsea/flip").random(size) < 0.5
    else:
        flips = np.zeros(size, dtype=bool)
    return DeepSeaParams(
        size=int(size),
        move_penalty=0.01 / size,
        goal_reward=1.0,
        action_flip_mask=tuple(bool(f) for f in flips),
    )


def _obs(size: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    obs = np.zeros((len(rows), size * size))
    live = rows < size
    obs[np.nonzero(live)[0], rows[live] * size + cols[live]] = 1.0
    return obs


def _transition(params: DeepSeaParams, rows, cols, actions):
    n = params.size
    flips = np.asarray(params.action_flip_mask, dtype=bool)
    right = (np.asarray(actions) == RIGHT) ^ flips[rows]
    rewards = np.where(right, -params.move_penalty, 0.0)
    goal = right & (rows == n - 1) & (cols == n - 1)
    rewards = rewards + np.where(goal, params.goal_reward, 0.0)
    cols = np.where(right, np.minimum(cols + 1, n - 1), np.maximum(cols - 1, 0))
    rows = rows + 1
    return rows, cols, rewards, rows >= n


def deepsea_reset(params: DeepSeaParams) -> tuple[EnvState, np.ndarray]:
    state = EnvState(agent_pos=(0, 0), object_alive=(), step_count=0, terminal=False)
    return state, _obs(params.size, np.array([0]), np.array([0]))[0]


def deepsea_step(state: EnvState, action: int, params: DeepSeaParams):
    """Single-environment transition: ``(state, obs, reward, done)``."""
    row, col = state.agent_pos
    rows, cols, rewards, dones = _transition(params, np.array([row]), np.array([col]), np.array([action]))
    done = bool(dones[0])
    new = EnvState(
        agent_pos=(int(rows[0]), int(cols[0])),
        object_alive=(),
        step_count=state.step_count + 1,
        terminal=done,
    )
    return new, _obs(params.size, rows, cols)[0], float(rewards[0]), done


class DeepSeaBatch:
    n_actions = 2

    def __init__(self, params: DeepSeaParams, n_envs: int):
        self.params = params
        self.n_envs = n_envs
        self.obs_dim = params.obs_dim
        self.rows = np.zeros(n_envs, dtype=np.int64)
        self.cols = np.zeros(n_envs, dtype=np.int64)

    def reset(self) -> np.ndarray:
        self.rows[:] = 0
        self.cols[:] = 0
        return _obs(self.params.size, self.rows, self.cols)

    def step(self, actions):
        rows, cols, rewards, dones = _transition(self.params, self.rows, self.cols, actions)
        self.rows = np.where(dones, 0, rows)
        self.cols = np.where(dones, 0, cols)
        return _obs(self.params.size, self.rows, self.cols), rewards, dones


@dataclass(frozen=True)
class DeepSeaSpec:
    size: int
    env_seed: int = 0
    randomize_actions: bool = True

    @property
    def params(self) -> DeepSeaParams:
        return make_deepsea_params(self.size, self.env_seed, self.randomize_actions)

    def make(self, n_envs: int, seed: int) -> DeepSeaBatch:
        # Deep Sea is deterministic given its flip mask; ``seed`` is unused.
        return DeepSeaBatch(self.params, n_envs)

    def return_bounds(self) -> tuple[float, float]:
        return self.params.return_bounds()
