"""Separate actor and critic MLPs stored in one flat parameter vector.

Layers compute ``x @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``. The flat
vector holds the actor's layers first (``W0, b0, ..., W_H, b_H``), then the
critic's. Gradients of the PPO loss are derived by hand for this fixed
architecture; the test-suite checks them against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, NamedTuple

import numpy as np

NETWORKS = ("actor", "critic")


class Segment(NamedTuple):
    network: str
    layer: int  # 0-based; hidden layers first, the output layer is ``n_hidden``
    kind: Literal["weight", "bias"]
    start: int
    stop: int
    shape: tuple[int, ...]


@dataclass(frozen=True)
class AgentLayout:
    obs_dim: int
    n_actions: int
    width: int = 16
    n_hidden: int = 2
    activation: Literal["tanh", "relu"] = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if min(self.obs_dim, self.n_actions, self.width) < 1 or self.n_hidden < 0:
            raise ValueError("layout dimensions must be positive")

    def layer_dims(self, network: str) -> list[tuple[int, int]]:
        out = self.n_actions if network == "actor" else 1
        dims = [self.obs_dim] + [self.width] * self.n_hidden + [out]
        return list(zip(dims[:-1], dims[1:]))

    @cached_property
    def segments(self) -> tuple[Segment, ...]:
        segs, pos = [], 0
        for net in NETWORKS:
            for layer, (fan_in, fan_out) in enumerate(self.layer_dims(net)):
                segs.append(Segment(net, layer, "weight", pos, pos + fan_in * fan_out, (fan_in, fan_out)))
                pos += fan_in * fan_out
                segs.append(Segment(net, layer, "bias", pos, pos + fan_out, (fan_out,)))
                pos += fan_out
        return tuple(segs)

    @property
    def size(self) -> int:
        return self.segments[-1].stop

    @property
    def n_layers(self) -> int:
        return self.n_hidden + 1

    @cached_property
    def actor_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for s in self.segments:
            if s.network == "actor":
                mask[s.start : s.stop] = True
        return mask

    @cached_property
    def layer_proportion(self) -> np.ndarray:
        """``h / H`` per parameter, counting layers 1..H within each network."""
        out = np.empty(self.size)
        for s in self.segments:
            out[s.start : s.stop] = (s.layer + 1) / self.n_layers
        return out

    def unflatten(self, flat: np.ndarray) -> dict[str, list[tuple[np.ndarray, np.ndarray]]]:
        """Per network, a list of ``(W, b)`` views into ``flat``."""
        nets: dict[str, list] = {n: [] for n in NETWORKS}
        segs = self.segments
        for w, b in zip(segs[::2], segs[1::2]):
            nets[w.network].append((flat[w.start : w.stop].reshape(w.shape), flat[b.start : b.stop]))
        return nets


@dataclass
class AgentParams:
    flat: np.ndarray
    layout: AgentLayout

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} parameters, got {self.flat.shape}")

    def replace(self, flat: np.ndarray) -> "AgentParams":
        return AgentParams(flat, self.layout)


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


def init_agent(layout: AgentLayout, rng: np.random.Generator) -> AgentParams:
    """Orthogonal weights (gain sqrt(2) hidden, 0.01 policy head, 1 value head), zero biases."""
    flat = np.zeros(layout.size)
    for s in layout.segments:
        if s.kind != "weight":
            continue
        if s.layer < layout.n_hidden:
            gain = np.sqrt(2.0)
        else:
            gain = 0.01 if s.network == "actor" else 1.0
        flat[s.start : s.stop] = _orthogonal(rng, s.shape, gain).ravel()
    return AgentParams(flat, layout)


@dataclass
class ActivationRecord:
    """Post-activation outputs per layer; the last entry is the raw network output."""

    actor: list[np.ndarray] = field(default_factory=list)
    critic: list[np.ndarray] = field(default_factory=list)

    def __getitem__(self, network: str) -> list[np.ndarray]:
        return getattr(self, network)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _mlp(layers, x: np.ndarray, activation: str) -> list[np.ndarray]:
    outs = []
    for w, b in layers[:-1]:
        x = _act(x @ w + b, activation)
        outs.append(x)
    w, b = layers[-1]
    outs.append(x @ w + b)
    return outs


def _mlp_backward(layers, x, outs, dout, activation, grads):
    """Accumulate ``(dW, db)`` for every layer into ``grads`` (list of views)."""
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        inp = x if i == 0 else outs[i - 1]
        gw, gb = grads[i]
        gw += inp.T @ delta
        gb += delta.sum(axis=0)
        if i == 0:
            break
        dh = delta @ layers[i][0].T
        h = outs[i - 1]
        delta = dh * (1.0 - h * h) if activation == "tanh" else dh * (h > 0)


def policy_forward(params: AgentParams, obs: np.ndarray):
    """Returns ``(logits, values, ActivationRecord)`` for a batch of observations."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if not np.all(np.isfinite(obs)):
        raise FloatingPointError("non-finite observation passed to policy_forward")
    lay = params.layout
    if obs.shape[1] != lay.obs_dim:
        raise ValueError(f"observation width {obs.shape[1]} != obs_dim {lay.obs_dim}")
    nets = lay.unflatten(params.flat)
    a = _mlp(nets["actor"], obs, lay.activation)
    c = _mlp(nets["critic"], obs, lay.activation)
    return a[-1], c[-1][:, 0], ActivationRecord(a, c)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class PpoLossConfig:
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    clip_value: bool = True
    normalize_advantages: bool = True


class Minibatch(NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    targets: np.ndarray
    old_values: np.ndarray


class LossAux(NamedTuple):
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float


def loss_and_grad(params: AgentParams, mb: Minibatch, hp: PpoLossConfig):
    """PPO loss ``-L_clip + c1 L_vf - c2 S`` and its exact gradient w.r.t. ``params.flat``."""
    n = len(mb.actions)
    if n == 0:
        raise ValueError("loss_and_grad needs a non-empty minibatch")
    lay = params.layout
    obs = np.asarray(mb.obs, dtype=np.float64)
    actions = np.asarray(mb.actions, dtype=np.int64)
    nets = lay.unflatten(params.flat)
    a_outs = _mlp(nets["actor"], obs, lay.activation)
    c_outs = _mlp(nets["critic"], obs, lay.activation)
    logits, values = a_outs[-1], c_outs[-1][:, 0]

    adv = np.asarray(mb.advantages, dtype=np.float64)
    if hp.normalize_advantages and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(n)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - mb.old_log_probs)
    clipped = np.clip(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    policy_loss = -np.mean(np.minimum(unclipped_obj, clipped_obj))
    entropy_each = -(probs * logp_all).sum(axis=1)
    entropy = entropy_each.mean()

    # d(policy_loss)/d logp_a: only samples where the unclipped branch is active.
    active = unclipped_obj <= clipped_obj
    d_logp = np.where(active, -adv * ratio, 0.0) / n
    onehot = np.zeros_like(logits)
    onehot[rows, actions] = 1.0
    d_logits = d_logp[:, None] * (onehot - probs)
    # d(-c2 * entropy)/d logits = c2 * p * (log p + S) / n
    d_logits += hp.ent_coef * probs * (logp_all + entropy_each[:, None]) / n

    targets = np.asarray(mb.targets, dtype=np.float64)
    err = values - targets
    if hp.clip_value:
        v_clip = mb.old_values + np.clip(values - mb.old_values, -hp.clip_eps, hp.clip_eps)
        err_clip = v_clip - targets
        use_clip = err_clip**2 > err**2
        value_loss = 0.5 * np.mean(np.where(use_clip, err_clip**2, err**2))
        inside = np.abs(values - mb.old_values) < hp.clip_eps
        d_values = np.where(use_clip, err_clip * inside, err) / n
    else:
        value_loss = 0.5 * np.mean(err**2)
        d_values = err / n
    d_values = hp.vf_coef * d_values

    loss = policy_loss + hp.vf_coef * value_loss - hp.ent_coef * entropy

    grad = np.zeros(lay.size)
    grad_views = lay.unflatten(grad)
    _mlp_backward(nets["actor"], obs, a_outs, d_logits, lay.activation, grad_views["actor"])
    _mlp_backward(nets["critic"], obs, c_outs, d_values[:, None], lay.activation, grad_views["critic"])

    clip_frac = float(np.mean(np.abs(ratio - 1.0) > hp.clip_eps))
    return float(loss), grad, LossAux(float(policy_loss), float(value_loss), float(entropy), clip_frac)


def global_grad_clip(grad: np.ndarray, max_norm: float) -> np.ndarray:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = np.linalg.norm(grad)
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


@dataclass
class DormancyScores:
    """Per network, one score array per layer (hidden layers then output layer)."""

    scores: dict[str, list[np.ndarray]]
    flagged: list[tuple[str, int]]

    def dormant_fraction(self, network: str, tau: float = 0.0, hidden_only: bool = True) -> float:
        layers = self.scores[network]
        if hidden_only and len(layers) > 1:
            layers = layers[:-1]
        s = np.concatenate(layers)
        return float(np.mean(s <= tau))


def neuron_scores(activations: np.ndarray) -> tuple[np.ndarray, bool]:
    """Score of each neuron (column) relative to its layer's mean activity.

    Returns the scores and whether the layer was entirely silent.
    """
    mean_abs = np.abs(np.atleast_2d(activations)).mean(axis=0)
    denom = mean_abs.mean()
    if denom == 0.0:
        return np.zeros_like(mean_abs), True
    return mean_abs / denom, False


def dormancy_scores(record: ActivationRecord) -> DormancyScores:
    scores: dict[str, list[np.ndarray]] = {}
    flagged = []
    for net in NETWORKS:
        layers = []
        for i, h in enumerate(record[net]):
            s, dead = neuron_scores(h)
            layers.append(s)
            if dead:
                flagged.append((net, i))
        scores[net] = layers
    return DormancyScores(scores, flagged)


def tile_to_params(layout: AgentLayout, dormancy: DormancyScores) -> np.ndarray:
    """Give every weight ``W[j, i]`` and bias ``b[i]`` the score of neuron ``i``."""
    out = np.empty(layout.size)
    for s in layout.segments:
        neuron = dormancy.scores[s.network][s.layer]
        if s.kind == "weight":
            out[s.start : s.stop] = np.broadcast_to(neuron, s.shape).ravel()
        else:
            out[s.start : s.stop] = neuron
    return out
