"""Task families and the PPO-backed fitness function used by meta-training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from openlo import rng as rngmod
from openlo.envs import ChainSpec, DeepSeaSpec, GridworldRanges, GridworldSpec
from openlo.errors import ConfigError, TrainingDiverged
from openlo.learned import FeatureMask, MetaArch, OpenOptimizer
from openlo.ppo import PpoConfig, train


@dataclass(frozen=True)
class DeepSeaFamily:
    """Deep Sea with size drawn uniformly from ``[min_size, max_size]`` per task seed."""

    min_size: int
    max_size: int
    randomize_actions: bool = True

    def __post_init__(self):
        if not 2 <= self.min_size <= self.max_size:
            raise ConfigError("need 2 <= min_size <= max_size", "env.size")

    def sample(self, task_seed: int) -> DeepSeaSpec:
        size = int(rngmod.stream(task_seed, "task/deepsea-size").integers(self.min_size, self.max_size + 1))
        return DeepSeaSpec(size, env_seed=task_seed, randomize_actions=self.randomize_actions)


@dataclass(frozen=True)
class GridworldFamily:
    ranges: GridworldRanges = GridworldRanges()

    def sample(self, task_seed: int) -> GridworldSpec:
        return GridworldSpec.sample(self.ranges, task_seed)


@dataclass(frozen=True)
class FixedTask:
    spec: object

    def sample(self, task_seed: int):
        return self.spec


def chain_family(length: int) -> FixedTask:
    return FixedTask(ChainSpec(length))


@dataclass(frozen=True)
class LearnedOptimizerSpec:
    mask: FeatureMask = FeatureMask()
    large: bool = False
    separated: bool = False

    @property
    def arch(self) -> MetaArch:
        return MetaArch.for_mask(self.mask, self.large)

    def build(self, meta: np.ndarray) -> OpenOptimizer:
        return OpenOptimizer(meta, self.mask, self.arch, separated=self.separated)


def evaluate_member(optimizer, env_spec, ppo: PpoConfig, seed: int) -> tuple[float, bool]:
    """Train once and return ``(final_return, failed)``."""
    try:
        result = train(optimizer, env_spec, ppo, seed)
    except (TrainingDiverged, FloatingPointError):
        return float("nan"), True
    if not np.isfinite(result.final_return):
        return float("nan"), True
    return result.final_return, False


@dataclass(frozen=True)
class PpoFitness:
    """Picklable ``(member, task_seed) -> final return`` for :func:`openlo.es.meta_train`."""

    family: object
    ppo: PpoConfig
    optimizer: LearnedOptimizerSpec

    def __call__(self, member: np.ndarray, task_seed: int) -> float:
        spec = self.family.sample(task_seed)
        seed = rngmod.derive_seed(task_seed, "task/train")
        value, failed = evaluate_member(self.optimizer.build(member), spec, self.ppo, seed)
        if failed:
            raise TrainingDiverged("inner training failed")
        return value


@dataclass(frozen=True)
class MultiTaskFitness:
    """Per-environment final returns for one member; the ES layer divides by baselines."""

    tasks: tuple
    ppos: tuple
    optimizer: LearnedOptimizerSpec

    def __call__(self, member: np.ndarray, task_seed: int) -> np.ndarray:
        opt = self.optimizer.build(member)
        out = []
        for i, (spec, ppo) in enumerate(zip(self.tasks, self.ppos)):
            value, failed = evaluate_member(opt, spec, ppo, rngmod.derive_seed(task_seed, "task/train", i))
            if failed:
                raise TrainingDiverged(f"inner training failed on environment {i}")
            out.append(value)
        return np.array(out)


def evaluate_seeds(optimizer, env_spec, ppo: PpoConfig, seeds) -> np.ndarray:
    """Final returns over a seed battery; failures are reported as nan."""
    return np.array([evaluate_member(optimizer, env_spec, ppo, int(s))[0] for s in seeds])
