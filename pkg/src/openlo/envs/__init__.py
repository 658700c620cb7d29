from openlo.envs.base import EnvSpec, EnvState, EnvUsageError, VecEnv
from openlo.envs.chain import ChainBatch, ChainSpec
from openlo.envs.deepsea import (
    DeepSeaBatch,
    DeepSeaParams,
    DeepSeaSpec,
    deepsea_reset,
    deepsea_step,
    make_deepsea_params,
)
from openlo.envs.gridworld import (
    GridworldBatch,
    GridworldParams,
    GridworldRanges,
    GridworldSpec,
    ObjectSpec,
    grid_reset,
    grid_step,
    sample_gridworld_params,
)


def chain_env(length: int, horizon: int | None = None, goal_reward: float = 1.0) -> ChainSpec:
    return ChainSpec(length=length, horizon=horizon, goal_reward=goal_reward)


__all__ = [
    "ChainBatch",
    "ChainSpec",
    "DeepSeaBatch",
    "DeepSeaParams",
    "DeepSeaSpec",
    "EnvSpec",
    "EnvState",
    "EnvUsageError",
    "GridworldBatch",
    "GridworldParams",
    "GridworldRanges",
    "GridworldSpec",
    "ObjectSpec",
    "VecEnv",
    "chain_env",
    "deepsea_reset",
    "deepsea_step",
    "grid_reset",
    "grid_step",
    "make_deepsea_params",
    "sample_gridworld_params",
]
