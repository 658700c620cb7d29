"""Deterministic chain MDP with closed-form optimum, used as a test oracle.

States are positions ``0 .. length-1``; action 1 moves right, action 0 moves
left (floored at 0). Stepping right from the last position reaches the goal,
pays ``goal_reward`` and ends the episode. Episodes also end after
``horizon`` steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class ChainSpec:
    length: int
    horizon: int | None = None
    goal_reward: float = 1.0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"chain length must be >= 1, got {self.length}")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def steps(self) -> int:
        return self.length if self.horizon is None else self.horizon

    @property
    def obs_dim(self) -> int:
        return self.length

    def optimal_return(self, gamma: float = 1.0) -> float:
        """Return of the always-right policy from the start state."""
        if self.steps < self.length:
            return 0.0
        return self.goal_reward * gamma ** (self.length - 1)

    def policy_value(self, p_right, gamma: float = 1.0) -> float:
        """Expected discounted return of a stationary policy, by backward induction.

        ``p_right`` is the probability of RIGHT in each position (scalar or array).
        """
        p = np.broadcast_to(np.asarray(p_right, dtype=float), (self.length,))
        v = np.zeros(self.length)
        for _ in range(self.steps):
            right_next = np.append(v[1:], 0.0)
            right_rew = np.zeros(self.length)
            right_rew[-1] = self.goal_reward
            left_next = v[np.maximum(np.arange(self.length) - 1, 0)]
            v = p * (right_rew + gamma * right_next) + (1 - p) * gamma * left_next
        return float(v[0])

    def return_bounds(self) -> tuple[float, float]:
        return 0.0, self.optimal_return()

    def make(self, n_envs: int, seed: int) -> "ChainBatch":
        return ChainBatch(self, n_envs)


class ChainBatch:
    n_actions = 2

    def __init__(self, spec: ChainSpec, n_envs: int):
        self.spec = spec
        self.n_envs = n_envs
        self.obs_dim = spec.obs_dim
        self.pos = np.zeros(n_envs, dtype=np.int64)
        self.t = np.zeros(n_envs, dtype=np.int64)

    def _obs(self) -> np.ndarray:
        obs = np.zeros((self.n_envs, self.obs_dim))
        obs[np.arange(self.n_envs), self.pos] = 1.0
        return obs

    def reset(self) -> np.ndarray:
        self.pos[:] = 0
        self.t[:] = 0
        return self._obs()

    def step(self, actions):
        right = np.asarray(actions) == RIGHT
        goal = right & (self.pos == self.spec.length - 1)
        rewards = np.where(goal, self.spec.goal_reward, 0.0)
        self.pos = np.where(right, self.pos + 1, np.maximum(self.pos - 1, 0))
        self.t += 1
        dones = goal | (self.t >= self.spec.steps)
        self.pos = np.where(dones, 0, np.minimum(self.pos, self.spec.length - 1))
        self.t = np.where(dones, 0, self.t)
        return self._obs(), rewards, dones
