"""PPO inner loop with a pluggable optimizer."""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from openlo import rng as rngmod
from openlo.agent import (
    AgentLayout,
    AgentParams,
    DormancyScores,
    Minibatch,
    PpoLossConfig,
    dormancy_scores,
    global_grad_clip,
    init_agent,
    log_softmax,
    loss_and_grad,
    policy_forward,
    tile_to_params,
)
from openlo.errors import ConfigError, TrainingDiverged
from openlo.interface import PpoSignals
from openlo.learned import update_momenta

METRIC_COLUMNS = (
    "update_index",
    "TP",
    "BP",
    "mean_return",
    "policy_loss",
    "value_loss",
    "entropy",
    "dormancy_actor",
    "dormancy_critic",
    "update_rms",
    "noise_rms",
)


@dataclass(frozen=True)
class PpoConfig:
    n_envs: int = 1024
    n_steps: int = 20
    total_timesteps: int = 30_000_000
    n_minibatch: int = 16
    n_epochs: int = 2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    max_grad_norm: float = 0.5
    width: int = 16
    n_hidden: int = 2
    activation: str = "tanh"
    clip_value: bool = True
    normalize_advantages: bool = True

    def __post_init__(self):
        for name in ("n_envs", "n_steps", "n_minibatch", "n_epochs", "width"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", f"ppo.{name}")
        if (self.n_envs * self.n_steps) % self.n_minibatch:
            raise ConfigError("n_envs * n_steps must be divisible by n_minibatch", "ppo.n_minibatch")
        if self.n_batches < 1:
            raise ConfigError("total_timesteps too small for one rollout batch", "ppo.total_timesteps")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gamma and gae_lambda must lie in [0, 1]", "ppo.gamma")
        if self.max_grad_norm <= 0:
            raise ConfigError("must be positive", "ppo.max_grad_norm")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}", "ppo.activation")

    @property
    def n_batches(self) -> int:
        return (self.total_timesteps // self.n_steps) // self.n_envs

    @property
    def minibatch_size(self) -> int:
        return self.n_envs * self.n_steps // self.n_minibatch

    @property
    def n_updates(self) -> int:
        return self.n_batches * self.n_epochs * self.n_minibatch

    @property
    def loss(self) -> PpoLossConfig:
        return PpoLossConfig(self.clip_eps, self.vf_coef, self.ent_coef, self.clip_value, self.normalize_advantages)

    def layout(self, obs_dim: int, n_actions: int) -> AgentLayout:
        return AgentLayout(obs_dim, n_actions, self.width, self.n_hidden, self.activation)


def training_proportion(t: int, cfg: PpoConfig) -> float:
    return (t // (cfg.n_epochs * cfg.n_minibatch)) / cfg.n_batches


def batch_proportion(t: int, cfg: PpoConfig) -> float:
    return ((t // cfg.n_minibatch) % cfg.n_epochs) / cfg.n_epochs


@dataclass
class Trajectory:
    obs: np.ndarray  # (n_steps, n_envs, obs_dim)
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    last_value: np.ndarray  # (n_envs,) bootstrap value of the state after the last step
    episode_returns: list[float] = field(default_factory=list)


class Runner:
    """Environment batch plus the bookkeeping that survives across rollouts."""

    def __init__(self, env):
        self.env = env
        self.obs = env.reset()
        self.running = np.zeros(env.n_envs)
        self.last_completed = np.full(env.n_envs, np.nan)


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    probs = np.exp(log_softmax(logits))
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(logits))[:, None] * cdf[:, -1:]
    return np.minimum((cdf < u).sum(axis=1), logits.shape[1] - 1)


def collect_rollout(runner: Runner, params: AgentParams, n_steps: int, rng: np.random.Generator) -> Trajectory:
    env = runner.env
    n = env.n_envs
    obs = np.empty((n_steps, n, env.obs_dim))
    actions = np.empty((n_steps, n), dtype=np.int64)
    log_probs = np.empty((n_steps, n))
    values = np.empty((n_steps, n))
    rewards = np.empty((n_steps, n))
    dones = np.empty((n_steps, n), dtype=bool)
    completed: list[float] = []
    for t in range(n_steps):
        obs[t] = runner.obs
        logits, v, _ = policy_forward(params, runner.obs)
        a = sample_actions(logits, rng)
        actions[t] = a
        log_probs[t] = log_softmax(logits)[np.arange(n), a]
        values[t] = v
        runner.obs, r, d = env.step(a)
        rewards[t] = r
        dones[t] = d
        runner.running += r
        if d.any():
            completed.extend(runner.running[d].tolist())
            runner.last_completed[d] = runner.running[d]
            runner.running[d] = 0.0
    _, last_value, _ = policy_forward(params, runner.obs)
    return Trajectory(obs, actions, log_probs, values, rewards, dones, last_value, completed)


def compute_gae(traj: Trajectory, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets, shape ``(n_steps, n_envs)``."""
    n_steps = traj.rewards.shape[0]
    adv = np.zeros_like(traj.rewards)
    next_adv = np.zeros(traj.rewards.shape[1:])
    next_value = traj.last_value
    for t in range(n_steps - 1, -1, -1):
        live = 1.0 - traj.dones[t]
        delta = traj.rewards[t] + gamma * next_value * live - traj.values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = traj.values[t]
    return adv, adv + traj.values


@dataclass
class UpdateRecord:
    """Snapshot of one optimizer update for offline analysis."""

    index: int
    update: np.ndarray
    raw: np.ndarray
    delta: np.ndarray | None
    noise: np.ndarray | None
    grad: np.ndarray
    momenta: np.ndarray
    params: np.ndarray  # before the update


@dataclass
class TrainResult:
    final_return: float
    metrics: dict[str, np.ndarray]
    params: AgentParams
    records: list[UpdateRecord]
    record_stride: int | None = None
    actor_mask: np.ndarray | None = None
    dormancy: list[DormancyScores] = field(default_factory=list)  # one per rollout batch
    updates_per_batch: int = 1

    @property
    def n_updates(self) -> int:
        return len(self.metrics["update_index"])

    def metric_rows(self):
        cols = [self.metrics[c] for c in METRIC_COLUMNS]
        for row in zip(*cols):
            yield dict(zip(METRIC_COLUMNS, row))


def _final_return(traj: Trajectory, runner: Runner) -> float:
    # Mean of episodes completed in the final rollout; falls back to each env's
    # latest completed episode, then to the partial return of the running one.
    if traj.episode_returns:
        return float(np.mean(traj.episode_returns))
    done_before = ~np.isnan(runner.last_completed)
    if done_before.any():
        return float(np.mean(runner.last_completed[done_before]))
    return float(np.mean(runner.running))


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if x is not None else 0.0


def train(
    optimizer,
    env_spec,
    config: PpoConfig,
    seed: int,
    record_stride: int | None = None,
    max_records: int | None = None,
) -> TrainResult:
    """Train a fresh agent on ``env_spec`` with ``optimizer``.

    All randomness is derived from ``seed``. Raises :class:`TrainingDiverged`
    on non-finite loss, gradient or parameters.
    """
    env = env_spec.make(config.n_envs, rngmod.derive_seed(seed, "env"))
    runner = Runner(env)
    layout = config.layout(env.obs_dim, env.n_actions)
    params = init_agent(layout, rngmod.stream(seed, "agent/init"))
    opt_state = optimizer.init(params)
    act_rng = rngmod.stream(seed, "rollout")
    shuffle_rng = rngmod.stream(seed, "shuffle")
    opt_rng = rngmod.stream(seed, "optimizer")
    hp = config.loss
    layer_prop = layout.layer_proportion
    batch = config.n_envs * config.n_steps
    mb_size = config.minibatch_size

    metrics = {c: np.empty(config.n_updates) for c in METRIC_COLUMNS}
    records: deque[UpdateRecord] | list[UpdateRecord] = deque(maxlen=max_records) if max_records else []
    momenta = np.zeros((6, layout.size)) if record_stride else None
    dorm_log: list[DormancyScores] = []
    t = 0
    traj = None
    for _ in range(config.n_batches):
        traj = collect_rollout(runner, params, config.n_steps, act_rng)
        adv, targets = compute_gae(traj, config.gamma, config.gae_lambda)
        flat_obs = traj.obs.reshape(batch, -1)
        data = Minibatch(
            flat_obs,
            traj.actions.reshape(batch),
            traj.log_probs.reshape(batch),
            adv.reshape(batch),
            targets.reshape(batch),
            traj.values.reshape(batch),
        )
        _, _, record = policy_forward(params, flat_obs)
        dorm = dormancy_scores(record)
        dorm_log.append(dorm)
        dorm_params = tile_to_params(layout, dorm) if optimizer.needs_dormancy else None
        d_actor, d_critic = dorm.dormant_fraction("actor"), dorm.dormant_fraction("critic")
        batch_return = float(np.mean(traj.episode_returns)) if traj.episode_returns else np.nan

        for _ in range(config.n_epochs):
            perm = shuffle_rng.permutation(batch)
            for k in range(config.n_minibatch):
                idx = perm[k * mb_size : (k + 1) * mb_size]
                mb = Minibatch(*(x[idx] for x in data))
                loss, grad, aux = loss_and_grad(params, mb, hp)
                if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                    raise TrainingDiverged(f"non-finite loss/gradient at update {t}")
                grad = global_grad_clip(grad, config.max_grad_norm)
                tp, bp = training_proportion(t, config), batch_proportion(t, config)
                signals = PpoSignals(t, tp, bp, dorm_params, layer_prop)
                before = params.flat
                params, opt_state, info = optimizer.step(opt_state, grad, params, signals, opt_rng)
                if not np.all(np.isfinite(params.flat)):
                    raise TrainingDiverged(f"non-finite parameters after update {t}")
                if momenta is not None:
                    momenta = update_momenta(momenta, grad)
                    if t % record_stride == 0:
                        records.append(
                            UpdateRecord(t, info.update, info.raw, info.delta, info.noise, grad, momenta, before)
                        )
                row = (t, tp, bp, batch_return, aux.policy_loss, aux.value_loss, aux.entropy,
                       d_actor, d_critic, _rms(info.update), _rms(info.noise_term))
                for c, v in zip(METRIC_COLUMNS, row):
                    metrics[c][t] = v
                t += 1

    return TrainResult(
        final_return=_final_return(traj, runner),
        metrics=metrics,
        params=params,
        records=list(records),
        record_stride=record_stride,
        actor_mask=layout.actor_mask,
        dormancy=dorm_log,
        updates_per_batch=config.n_epochs * config.n_minibatch,
    )


def config_dict(cfg: PpoConfig) -> dict:
    return asdict(cfg)
