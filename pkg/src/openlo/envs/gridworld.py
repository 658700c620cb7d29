"""Parametric gridworld distribution with collectable, respawning objects."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from openlo import rng as rngmod
from openlo.envs.base import EnvState, EnvUsageError
from openlo.errors import ConfigError

MAX_OBJECTS = 6
N_CHANNELS = MAX_OBJECTS + 2  # object slots, walls, agent
UP, RIGHT, DOWN, LEFT = range(4)
_MOVES = np.array([(-1, 0), (0, 1), (1, 0), (0, -1)])


@dataclass(frozen=True)
class ObjectSpec:
    reward: float
    p_terminate: float
    p_respawn: float


@dataclass(frozen=True)
class GridworldRanges:
    """Inclusive (min, max) ranges; defaults reproduce the standard task distribution."""

    grid_size: tuple[int, int] = (4, 11)
    max_steps: tuple[int, int] = (20, 750)
    n_objects: tuple[int, int] = (1, 6)
    reward: tuple[float, float] = (-1.0, 1.0)
    p_terminate: tuple[float, float] = (0.01, 1.0)
    p_respawn: tuple[float, float] = (0.001, 0.1)
    n_walls: tuple[int, int] = (15, 15)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if lo > hi:
                raise ConfigError(f"gridworld range {f.name}: min {lo} > max {hi}")
        if self.n_objects[0] < 1 or self.n_objects[1] > MAX_OBJECTS:
            raise ConfigError(f"n_objects must lie in [1, {MAX_OBJECTS}]")
        if self.grid_size[0] < 2:
            raise ConfigError("grid_size must be >= 2")


@dataclass(frozen=True)
class GridworldParams:
    grid_size: int
    max_steps: int
    objects: tuple[ObjectSpec, ...]
    n_walls: int
    wall_positions: tuple[tuple[int, int], ...]
    object_positions: tuple[tuple[int, int], ...]
    agent_start: tuple[int, int]
    rng_seed: int = 0

    @property
    def obs_dim(self) -> int:
        return self.grid_size * self.grid_size * N_CHANNELS

    def return_bounds(self) -> tuple[float, float]:
        # Every step can collect at most one object.
        lo = min(0.0, min(o.reward for o in self.objects)) * self.max_steps
        hi = max(0.0, max(o.reward for o in self.objects)) * self.max_steps
        return lo, hi


def _uniform_int(rng, lo_hi):
    return int(rng.integers(lo_hi[0], lo_hi[1] + 1))


def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def sample_gridworld_params(ranges: GridworldRanges, rng: np.random.Generator | int) -> GridworldParams:
    """Draw one task. An integer ``rng`` is treated as the task seed."""
    seed = int(rng) if not isinstance(rng, np.random.Generator) else int(rng.integers(2**63))
    g = rngmod.stream(seed, "gridworld/params")
    size = _uniform_int(g, ranges.grid_size)
    max_steps = _uniform_int(g, ranges.max_steps)
    n_obj = _uniform_int(g, ranges.n_objects)
    objects = tuple(
        ObjectSpec(_uniform(g, ranges.reward), _uniform(g, ranges.p_terminate), _uniform(g, ranges.p_respawn))
        for _ in range(n_obj)
    )
    n_walls = _uniform_int(g, ranges.n_walls)
    cells = size * size
    # Keep as many free cells as there are other entities so respawns always fit.
    placed_walls = max(0, min(n_walls, cells - 2 * (n_obj + 1)))
    order = g.permutation(cells)[: n_obj + 1 + placed_walls]
    coords = [(int(c // size), int(c % size)) for c in order]
    return GridworldParams(
        grid_size=size,
        max_steps=max_steps,
        objects=objects,
        n_walls=n_walls,
        agent_start=coords[0],
        object_positions=tuple(coords[1 : n_obj + 1]),
        wall_positions=tuple(sorted(coords[n_obj + 1 :])),
        rng_seed=seed,
    )


def _wall_grid(params: GridworldParams) -> np.ndarray:
    walls = np.zeros((params.grid_size, params.grid_size), dtype=bool)
    for r, c in params.wall_positions:
        walls[r, c] = True
    return walls


def _observe(params: GridworldParams, state: EnvState) -> np.ndarray:
    n = params.grid_size
    obs = np.zeros((N_CHANNELS, n, n))
    for k, ((r, c), alive) in enumerate(zip(state.object_positions, state.object_alive)):
        if alive:
            obs[k, r, c] = 1.0
    obs[MAX_OBJECTS] = _wall_grid(params)
    obs[MAX_OBJECTS + 1][state.agent_pos] = 1.0
    return obs.reshape(-1)


def grid_reset(params: GridworldParams, rng: np.random.Generator | None = None):
    state = EnvState(
        agent_pos=params.agent_start,
        object_alive=(True,) * len(params.objects),
        step_count=0,
        terminal=False,
        object_positions=params.object_positions,
    )
    return state, _observe(params, state)


def grid_step(state: EnvState, action: int, rng: np.random.Generator, params: GridworldParams):
    """Order within a step: move, collect, respawn, timeout."""
    if state.terminal:
        raise EnvUsageError("grid_step called on a terminal state; reset first")
    if action not in (UP, RIGHT, DOWN, LEFT):
        raise EnvUsageError(f"invalid action {action}")
    n = params.grid_size
    walls = _wall_grid(params)
    r, c = np.array(state.agent_pos) + _MOVES[action]
    pos = (int(r), int(c)) if 0 <= r < n and 0 <= c < n and not walls[r, c] else state.agent_pos

    alive = list(state.object_alive)
    positions = list(state.object_positions)
    reward, terminated = 0.0, False
    for k, obj in enumerate(params.objects):
        if alive[k] and positions[k] == pos:
            reward += obj.reward
            alive[k] = False
            terminated = terminated or bool(rng.random() < obj.p_terminate)

    for k, obj in enumerate(params.objects):
        if alive[k] or rng.random() >= obj.p_respawn:
            continue
        taken = walls.copy()
        taken[pos] = True
        for p, a in zip(positions, alive):
            if a:
                taken[p] = True
        free = np.argwhere(~taken)
        if len(free):
            positions[k] = tuple(int(x) for x in free[rng.integers(len(free))])
            alive[k] = True

    steps = state.step_count + 1
    done = terminated or steps >= params.max_steps
    new = EnvState(
        agent_pos=pos,
        object_alive=tuple(alive),
        step_count=steps,
        terminal=done,
        object_positions=tuple(positions),
    )
    return new, _observe(params, new), reward, done


class GridworldBatch:
    n_actions = 4

    def __init__(self, params: GridworldParams, n_envs: int, seed: int):
        self.params = params
        self.n_envs = n_envs
        self.obs_dim = params.obs_dim
        self._rngs = [rngmod.stream(seed, "gridworld/dynamics", i) for i in range(n_envs)]
        self.states: list[EnvState] = []

    def reset(self) -> np.ndarray:
        out = [grid_reset(self.params) for _ in range(self.n_envs)]
        self.states = [s for s, _ in out]
        return np.stack([o for _, o in out])

    def step(self, actions):
        obs = np.empty((self.n_envs, self.obs_dim))
        rewards = np.empty(self.n_envs)
        dones = np.empty(self.n_envs, dtype=bool)
        for i, a in enumerate(np.asarray(actions)):
            s, o, rewards[i], dones[i] = grid_step(self.states[i], int(a), self._rngs[i], self.params)
            if dones[i]:
                s, o = grid_reset(self.params)
            self.states[i] = s
            obs[i] = o
        return obs, rewards, dones


@dataclass(frozen=True)
class GridworldSpec:
    params: GridworldParams

    @classmethod
    def sample(cls, ranges: GridworldRanges, seed: int) -> "GridworldSpec":
        return cls(sample_gridworld_params(ranges, seed))

    def make(self, n_envs: int, seed: int) -> GridworldBatch:
        return GridworldBatch(self.params, n_envs, seed)

    def return_bounds(self) -> tuple[float, float]:
        return self.params.return_bounds()
