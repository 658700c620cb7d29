"""OpenAI-style evolution strategies over a flat meta-parameter vector."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from openlo import rng as rngmod
from openlo.errors import ConfigError, TrainingDiverged

TASK_MODES = ("shared", "antithetic")
FITNESS_COLUMNS = ("generation", "member", "task_seed", "raw_fitness", "shaped_fitness", "failed")


@dataclass(frozen=True)
class EsConfig:
    sigma_init: float = 0.01
    sigma_decay: float = 0.999
    lr: float = 0.005
    lr_decay: float = 0.990
    pop_size: int = 64
    n_generations: int = 48
    eval_freq: int = 9
    task_sampling: str = "shared"
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.pop_size < 2 or self.pop_size % 2:
            raise ConfigError("population must be even and >= 2", "es.pop_size")
        if self.sigma_init <= 0:
            raise ConfigError("must be positive", "es.sigma_init")
        if self.lr <= 0:
            raise ConfigError("must be positive", "es.lr")
        for name in ("sigma_decay", "lr_decay"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError("must lie in (0, 1]", f"es.{name}")
        if self.n_generations < 1:
            raise ConfigError("must be >= 1", "es.n_generations")
        if self.eval_freq < 1:
            raise ConfigError("must be >= 1", "es.eval_freq")
        if self.task_sampling not in TASK_MODES:
            raise ConfigError(f"must be one of {TASK_MODES}", "es.task_sampling")

    @property
    def n_checkpoints(self) -> int:
        return math.ceil(self.n_generations / self.eval_freq)


@dataclass(frozen=True)
class EsState:
    mean: np.ndarray
    sigma: float
    lr: float
    m: np.ndarray
    v: np.ndarray
    generation: int = 0
    best_mean: np.ndarray | None = None
    best_fitness: float = -math.inf
    best_generation: int = -1


def init_es_state(mean: np.ndarray, cfg: EsConfig) -> EsState:
    mean = np.asarray(mean, dtype=np.float64).copy()
    zeros = np.zeros_like(mean)
    return EsState(mean=mean, sigma=cfg.sigma_init, lr=cfg.lr, m=zeros, v=zeros.copy())


@dataclass(frozen=True)
class Population:
    eps: np.ndarray  # (pop/2, dim), one row per antithetic pair
    members: np.ndarray  # (pop, dim); member 2k = mean + sigma*eps_k, 2k+1 = mean - sigma*eps_k

    @property
    def signs(self) -> np.ndarray:
        return np.tile([1.0, -1.0], len(self.eps))

    @property
    def perturbations(self) -> np.ndarray:
        return np.repeat(self.eps, 2, axis=0) * self.signs[:, None]


def sample_population(state: EsState, pop_size: int, rng: np.random.Generator) -> Population:
    if pop_size % 2:
        raise ConfigError("population must be even", "es.pop_size")
    eps = rng.standard_normal((pop_size // 2, state.mean.size))
    members = np.empty((pop_size, state.mean.size))
    members[0::2] = state.mean + state.sigma * eps
    members[1::2] = state.mean - state.sigma * eps
    return Population(eps, members)


def rank_transform(fitness: Sequence[float], failed: Sequence[bool] | None = None) -> np.ndarray:
    """Map fitness to evenly spaced values in [-0.5, 0.5] by ascending rank.

    Ties are broken by member index. Failed members rank lowest and are pinned
    to -0.5. If every fitness is equal (and nothing failed) all outputs are 0.
    """
    f = np.asarray(fitness, dtype=np.float64)
    n = f.size
    if n < 2:
        raise ValueError("rank_transform needs at least two members")
    bad = np.zeros(n, dtype=bool) if failed is None else np.asarray(failed, dtype=bool)
    bad = bad | ~np.isfinite(f)
    if not bad.any() and np.all(f == f[0]):
        return np.zeros(n)
    key = np.where(bad, -np.inf, f)
    ranks = np.empty(n)
    ranks[np.argsort(key, kind="stable")] = np.arange(n)
    shaped = ranks / (n - 1) - 0.5
    shaped[bad] = -0.5
    return shaped


def pair_shaping(fitness: Sequence[float], failed: Sequence[bool] | None = None) -> np.ndarray:
    """Within-pair ranking for antithetic task sampling: the better member of each pair gets +0.5."""
    f = np.asarray(fitness, dtype=np.float64)
    if f.size % 2:
        raise ValueError("pair shaping needs an even number of members")
    bad = np.zeros(f.size, dtype=bool) if failed is None else np.asarray(failed, dtype=bool)
    bad = bad | ~np.isfinite(f)
    key = np.where(bad, -np.inf, f).reshape(-1, 2)
    out = np.zeros_like(key)
    out[key[:, 0] > key[:, 1]] = (0.5, -0.5)
    out[key[:, 0] < key[:, 1]] = (-0.5, 0.5)
    return out.reshape(-1)


def es_gradient(perturbations: np.ndarray, shaped: np.ndarray, sigma: float) -> np.ndarray:
    """Ascent direction ``sum_k shaped_k * eps_k / (n * sigma)`` with signed per-member noise."""
    if sigma <= 0:
        raise ConfigError("sigma must be positive", "es.sigma_init")
    shaped = np.asarray(shaped, dtype=np.float64)
    return shaped @ perturbations / (len(shaped) * sigma)


def es_update(state: EsState, grad: np.ndarray, cfg: EsConfig) -> EsState:
    count = state.generation + 1
    m = cfg.adam_b1 * state.m + (1 - cfg.adam_b1) * grad
    v = cfg.adam_b2 * state.v + (1 - cfg.adam_b2) * grad * grad
    m_hat = m / (1 - cfg.adam_b1**count)
    v_hat = v / (1 - cfg.adam_b2**count)
    mean = state.mean + state.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return replace(
        state,
        mean=mean,
        m=m,
        v=v,
        sigma=state.sigma * cfg.sigma_decay,
        lr=state.lr * cfg.lr_decay,
        generation=count,
    )


def multitask_scores(returns: np.ndarray, baseline: np.ndarray) -> np.ndarray:
    returns = np.atleast_2d(np.asarray(returns, dtype=np.float64))
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != returns.shape[1:]:
        raise ConfigError("one baseline return per environment required", "es.baseline_returns")
    if np.any(baseline <= 0):
        raise ConfigError("baseline returns must be positive; configure an offset", "es.baseline_returns")
    return np.mean(returns / baseline, axis=1)


def multitask_fitness(returns: np.ndarray, baseline: np.ndarray, failed=None) -> np.ndarray:
    """Mean of per-environment return ratios to the baseline, then rank-shaped."""
    return rank_transform(multitask_scores(returns, baseline), failed)


def antithetic_task_assign(n_pairs: int, master: int, generation: int) -> np.ndarray:
    """One task seed per antithetic pair, repeated for both members."""
    seeds = [rngmod.derive_seed(master, "es/task", generation, k) for k in range(n_pairs)]
    return np.repeat(np.array(seeds, dtype=np.uint64), 2)


def task_seeds_for(cfg: EsConfig, master: int, generation: int) -> np.ndarray:
    if cfg.task_sampling == "antithetic":
        return antithetic_task_assign(cfg.pop_size // 2, master, generation)
    seed = rngmod.derive_seed(master, "es/task", generation, 0)
    return np.full(cfg.pop_size, seed, dtype=np.uint64)


Evaluate = Callable[[np.ndarray, int], "float | np.ndarray"]


def safe_evaluate(evaluate: Evaluate, member: np.ndarray, task_seed: int):
    """Run one evaluation; a diverged or non-finite result becomes a flagged failure."""
    try:
        value = np.asarray(evaluate(member, int(task_seed)), dtype=np.float64)
    except (TrainingDiverged, FloatingPointError, OverflowError):
        return None, True
    if not np.all(np.isfinite(value)):
        return None, True
    return value, False


def _call(args):
    evaluate, member, seed = args
    return safe_evaluate(evaluate, member, seed)


class Evaluator:
    """Maps evaluations over members, in-process or on a worker pool, preserving order."""

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ConfigError("must be >= 1", "run.workers")
        self.workers = workers
        self._pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def map(self, evaluate: Evaluate, members: np.ndarray, seeds: Sequence[int]):
        jobs = [(evaluate, m, s) for m, s in zip(members, seeds)]
        if self._pool is None:
            return [_call(j) for j in jobs]
        return list(self._pool.map(_call, jobs))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class GenerationReport:
    generation: int
    raw: np.ndarray  # (pop,) scalar fitness, nan where failed
    shaped: np.ndarray
    failed: np.ndarray
    task_seeds: np.ndarray
    validation: float | None = None

    def rows(self):
        for k in range(len(self.raw)):
            yield (self.generation, k, int(self.task_seeds[k]), float(self.raw[k]),
                   float(self.shaped[k]), bool(self.failed[k]))


@dataclass
class MetaTrainResult:
    state: EsState
    reports: list[GenerationReport] = field(default_factory=list)
    checkpoints: list[tuple[int, float, np.ndarray]] = field(default_factory=list)

    def fitness_rows(self):
        for rep in self.reports:
            yield from rep.rows()


def shape_generation(cfg: EsConfig, values: list, failed: np.ndarray, baseline=None):
    """Return (raw scalar fitness, shaped fitness) for one generation."""
    pop = len(values)
    if baseline is not None:
        n_env = len(np.atleast_1d(baseline))
        mat = np.array([np.zeros(n_env) if v is None else np.atleast_1d(v) for v in values])
        raw = multitask_scores(mat, baseline)
    else:
        raw = np.array([np.nan if v is None else float(v) for v in values])
    raw = np.where(failed, np.nan, raw)
    if cfg.task_sampling == "antithetic":
        shaped = pair_shaping(raw, failed)
    else:
        shaped = rank_transform(raw, failed)
    assert shaped.shape == (pop,)
    return raw, shaped


def meta_train(
    evaluate: Evaluate,
    init_mean: np.ndarray,
    cfg: EsConfig,
    seed: int,
    *,
    workers: int = 1,
    validate: Callable[[np.ndarray], float] | None = None,
    state: EsState | None = None,
    baseline: np.ndarray | None = None,
    on_generation: Callable[[GenerationReport, EsState], None] | None = None,
    on_checkpoint: Callable[[int, float, EsState], None] | None = None,
) -> MetaTrainResult:
    """Run ES from ``init_mean`` (or resume from ``state``) up to ``cfg.n_generations``.

    ``evaluate(member, task_seed)`` returns a scalar fitness, or a per-environment
    return vector when ``baseline`` is given. Every ``eval_freq`` generations (and
    at the end) ``validate`` scores the updated mean and the best one is archived.
    """
    state = state if state is not None else init_es_state(init_mean, cfg)
    result = MetaTrainResult(state)
    with Evaluator(workers) as pool:
        while state.generation < cfg.n_generations:
            gen = state.generation
            pop = sample_population(state, cfg.pop_size, rngmod.stream(seed, "es/population", gen))
            seeds = task_seeds_for(cfg, seed, gen)
            outcomes = pool.map(evaluate, pop.members, seeds)
            values = [v for v, _ in outcomes]
            failed = np.array([f for _, f in outcomes], dtype=bool)
            raw, shaped = shape_generation(cfg, values, failed, baseline)
            grad = es_gradient(pop.perturbations, shaped, state.sigma)
            state = es_update(state, grad, cfg)
            report = GenerationReport(gen, raw, shaped, failed, seeds)
            if state.generation % cfg.eval_freq == 0 or state.generation == cfg.n_generations:
                score = validate(state.mean) if validate is not None else float(np.nanmean(raw))
                report.validation = score
                if score > state.best_fitness:
                    state = replace(
                        state, best_mean=state.mean.copy(), best_fitness=score, best_generation=state.generation
                    )
                result.checkpoints.append((state.generation, score, state.mean.copy()))
                if on_checkpoint is not None:
                    on_checkpoint(state.generation, score, state)
            result.reports.append(report)
            if on_generation is not None:
                on_generation(report, state)
    result.state = state
    return result
