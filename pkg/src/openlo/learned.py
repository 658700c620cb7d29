"""Per-parameter recurrent learned optimizer for RL agents.

Every agent parameter is fed through the same small network: a GRU over a
19-channel feature vector followed by a two-layer LayerNorm MLP with three
outputs ``(m, e, delta)``. The applied update is built in three stages::

    u_hat = a1 * m * exp(a2 * e)             # deterministic, many orders of magnitude
    u_hat += a3 * delta * eps  (actor only)  # learned parameter-space noise
    u = u_hat - mean(u_hat)                  # zero-meaning
    p <- p - u
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import cached_property

import numpy as np

from openlo.errors import ConfigError, TrainingDiverged
from openlo.interface import PpoSignals, UpdateInfo

BETAS = (0.1, 0.5, 0.9, 0.99, 0.999, 0.9999)
LOG_EPS = 1e-8
ALPHA = (0.001, 0.001, 0.001)
LN_EPS = 1e-5


@dataclass(frozen=True)
class FeatureMask:
    """Which optional inputs the optimizer sees.

    Disabled inputs are zeroed at full width. ``reduced`` builds the
    gradient-and-momentum-only optimizer: 14 inputs and no noise output.
    """

    tp: bool = True
    bp: bool = True
    dormancy: bool = True
    layer_prop: bool = True
    param_value: bool = True
    stochasticity: bool = True
    momentum: bool = True
    reduced: bool = False

    @property
    def n_inputs(self) -> int:
        return 2 + 2 * len(BETAS) + (0 if self.reduced else 5)

    @property
    def n_outputs(self) -> int:
        return 2 if self.reduced else 3

    @classmethod
    def named(cls, name: str) -> "FeatureMask":
        try:
            return NAMED_MASKS[name]
        except KeyError:
            raise ConfigError(f"unknown feature mask {name!r}; known: {sorted(NAMED_MASKS)}") from None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


NAMED_MASKS = {
    "none": FeatureMask(),
    "no_TP": FeatureMask(tp=False),
    "no_BP": FeatureMask(bp=False),
    "no_dormancy": FeatureMask(dormancy=False),
    "no_layer": FeatureMask(layer_prop=False),
    "no_param": FeatureMask(param_value=False),
    "no_momentum": FeatureMask(momentum=False),
    "no_stochasticity": FeatureMask(stochasticity=False),
    "no_features": FeatureMask(
        tp=False, bp=False, dormancy=False, layer_prop=False, param_value=False, stochasticity=False, reduced=True
    ),
}


@dataclass(frozen=True)
class MetaArch:
    n_inputs: int = 19
    hidden: int = 8
    width: int = 16
    n_outputs: int = 3

    @classmethod
    def for_mask(cls, mask: FeatureMask, large: bool = False) -> "MetaArch":
        h, w = (16, 32) if large else (8, 16)
        return cls(mask.n_inputs, h, w, mask.n_outputs)

    @cached_property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        i, h, w, o = self.n_inputs, self.hidden, self.width, self.n_outputs
        return {
            "gru_wx": (i, 3 * h),
            "gru_wh": (h, 3 * h),
            "gru_b": (3 * h,),
            "fc1_w": (h, w),
            "fc1_b": (w,),
            "ln1_scale": (w,),
            "ln1_offset": (w,),
            "fc2_w": (w, w),
            "fc2_b": (w,),
            "ln2_scale": (w,),
            "ln2_offset": (w,),
            "out_w": (w, o),
            "out_b": (o,),
        }

    @cached_property
    def offsets(self) -> dict[str, tuple[int, int]]:
        out, pos = {}, 0
        for k, shape in self.shapes.items():
            n = int(np.prod(shape))
            out[k] = (pos, pos + n)
            pos += n
        return out

    @property
    def size(self) -> int:
        return next(reversed(self.offsets.values()))[1]

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        if flat.shape != (self.size,):
            raise ValueError(f"meta vector has {flat.shape}, architecture needs ({self.size},)")
        return {k: flat[a:b].reshape(self.shapes[k]) for k, (a, b) in self.offsets.items()}

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit LayerNorm scales."""
        flat = np.zeros(self.size)
        views = self.unflatten(flat)
        for k, v in views.items():
            if k.endswith("_w") or k.startswith("gru_w"):
                bound = 1.0 / np.sqrt(v.shape[0])
                v[...] = rng.uniform(-bound, bound, v.shape)
            elif k.endswith("_scale"):
                v[...] = 1.0
        return flat


@dataclass(frozen=True)
class OptimizerState:
    hidden: np.ndarray  # (n_params, arch.hidden)
    momenta: np.ndarray  # (len(BETAS), n_params)
    t: int = 0


def init_opt_state(n_params: int, arch: MetaArch) -> OptimizerState:
    return OptimizerState(np.zeros((n_params, arch.hidden)), np.zeros((len(BETAS), n_params)), 0)


def update_momenta(momenta: np.ndarray, grad: np.ndarray) -> np.ndarray:
    b = np.asarray(BETAS)[:, None]
    return b * momenta + (1.0 - b) * grad[None, :]


def normalize_per_tensor(x: np.ndarray, starts: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Scale each contiguous tensor (last axis) to unit second moment; all-zero tensors stay zero."""
    ms = np.add.reduceat(x * x, starts, axis=-1) / sizes
    inv = np.divide(1.0, np.sqrt(ms), out=np.zeros_like(ms), where=ms > 0)
    return x * np.repeat(inv, sizes, axis=-1)


def build_features(
    grad: np.ndarray,
    momenta: np.ndarray,
    params: np.ndarray,
    tp: float,
    bp: float,
    dormancy: np.ndarray | None,
    layer_prop: np.ndarray | None,
    mask: FeatureMask,
    tensor_starts: np.ndarray,
    tensor_sizes: np.ndarray,
) -> np.ndarray:
    """Per-parameter input rows, shape ``(n_params, mask.n_inputs)``.

    Columns: sign/log of the gradient, sign/log of each momentum, then (unless
    reduced) parameter value, TP, BP, dormancy and layer proportion.
    """
    n = grad.shape[0]
    if n == 0:
        return np.zeros((0, mask.n_inputs))
    raw = np.vstack([grad[None, :], momenta])  # (1 + n_betas, n)
    raw = normalize_per_tensor(raw, tensor_starts, tensor_sizes)
    feats = np.empty((n, mask.n_inputs))
    feats[:, 0 : 2 * raw.shape[0] : 2] = np.sign(raw).T
    feats[:, 1 : 2 * raw.shape[0] : 2] = np.log(np.abs(raw) + LOG_EPS).T
    if not mask.momentum:
        feats[:, 2 : 2 * raw.shape[0]] = 0.0
    if mask.reduced:
        return feats
    k = 2 * raw.shape[0]
    p = normalize_per_tensor(params[None, :], tensor_starts, tensor_sizes)[0]
    feats[:, k] = p if mask.param_value else 0.0
    feats[:, k + 1] = tp if mask.tp else 0.0
    feats[:, k + 2] = bp if mask.bp else 0.0
    feats[:, k + 3] = dormancy if (mask.dormancy and dormancy is not None) else 0.0
    feats[:, k + 4] = layer_prop if (mask.layer_prop and layer_prop is not None) else 0.0
    return feats


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_cell(w: dict[str, np.ndarray], x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Batched GRU update; rows of ``x``/``h`` are independent parameters."""
    nh = h.shape[-1]
    gx = x @ w["gru_wx"] + w["gru_b"]
    wh = w["gru_wh"]
    zr = _sigmoid(gx[..., : 2 * nh] + h @ wh[:, : 2 * nh])
    z, r = zr[..., :nh], zr[..., nh:]
    cand = np.tanh(gx[..., 2 * nh :] + (r * h) @ wh[:, 2 * nh :])
    return (1.0 - z) * h + z * cand


def layer_norm(x: np.ndarray, scale: np.ndarray, offset: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * scale + offset


def mlp_head(w: dict[str, np.ndarray], h: np.ndarray) -> np.ndarray:
    x = np.maximum(layer_norm(h @ w["fc1_w"] + w["fc1_b"], w["ln1_scale"], w["ln1_offset"]), 0.0)
    x = np.maximum(layer_norm(x @ w["fc2_w"] + w["fc2_b"], w["ln2_scale"], w["ln2_offset"]), 0.0)
    return x @ w["out_w"] + w["out_b"]


def _zero_mean(u: np.ndarray, groups: list[np.ndarray] | None) -> np.ndarray:
    if groups is None:
        return u - u.mean()
    out = np.empty_like(u)
    for g in groups:
        out[g] = u[g] - u[g].mean()
    return out


@dataclass(frozen=True)
class TensorLayout:
    """Contiguous tensor boundaries plus per-parameter static context of an agent."""

    starts: np.ndarray
    sizes: np.ndarray
    actor_mask: np.ndarray
    layer_prop: np.ndarray

    @classmethod
    def from_agent(cls, layout) -> "TensorLayout":
        segs = layout.segments
        return cls(
            starts=np.array([s.start for s in segs]),
            sizes=np.array([s.stop - s.start for s in segs]),
            actor_mask=layout.actor_mask,
            layer_prop=layout.layer_proportion,
        )


def open_step(
    meta: np.ndarray,
    arch: MetaArch,
    state: OptimizerState,
    grad: np.ndarray,
    params: np.ndarray,
    signals: PpoSignals,
    tensors: TensorLayout,
    rng: np.random.Generator,
    mask: FeatureMask = FeatureMask(),
    separated: bool = False,
    zero_mean: str = "global",
    alpha: tuple[float, float, float] = ALPHA,
):
    """One learned-optimizer update. Returns ``(new_params, new_state, UpdateInfo)``.

    With ``separated`` the meta vector holds two networks back to back (actor,
    then critic) and zero-meaning is done per network. Otherwise
    ``zero_mean`` selects ``"global"`` (mean over all agent parameters) or
    ``"per_network"``.
    """
    momenta = update_momenta(state.momenta, grad)
    lp = signals.layer_prop if signals.layer_prop is not None else tensors.layer_prop
    feats = build_features(
        grad, momenta, params, signals.tp, signals.bp, signals.dormancy, lp, mask, tensors.starts, tensors.sizes
    )
    actor = tensors.actor_mask
    if separated:
        if meta.shape != (2 * arch.size,):
            raise ValueError(f"separated optimizer needs {2 * arch.size} meta parameters, got {meta.shape}")
        hidden = np.empty_like(state.hidden)
        out = np.empty((len(grad), arch.n_outputs))
        for half, sel in ((meta[: arch.size], actor), (meta[arch.size :], ~actor)):
            w = arch.unflatten(half)
            hidden[sel] = gru_cell(w, feats[sel], state.hidden[sel])
            out[sel] = mlp_head(w, hidden[sel])
    else:
        w = arch.unflatten(meta)
        hidden = gru_cell(w, feats, state.hidden)
        out = mlp_head(w, hidden)

    a1, a2, a3 = alpha
    raw = a1 * out[:, 0] * np.exp(a2 * out[:, 1])
    delta = out[:, 2] if arch.n_outputs > 2 else None
    noise = noise_term = None
    u_hat = raw
    if delta is not None and mask.stochasticity:
        noise = rng.standard_normal(len(grad)) * actor
        noise_term = a3 * delta * noise
        u_hat = raw + noise_term

    groups = [np.flatnonzero(actor), np.flatnonzero(~actor)] if (separated or zero_mean == "per_network") else None
    u = _zero_mean(u_hat, groups)
    if not np.all(np.isfinite(u)):
        raise TrainingDiverged(f"learned optimizer produced a non-finite update at step {state.t}")
    new_state = OptimizerState(hidden, momenta, state.t + 1)
    return params - u, new_state, UpdateInfo(update=u, raw=raw, delta=delta, noise=noise, noise_term=noise_term)


def separated_step(meta_actor, meta_critic, arch, state, grad, params, signals, tensors, rng, mask=FeatureMask()):
    """Independent optimizers for actor and critic; same contract as :func:`open_step`."""
    meta = np.concatenate([meta_actor, meta_critic])
    return open_step(meta, arch, state, grad, params, signals, tensors, rng, mask, separated=True)


class OpenOptimizer:
    """Learned optimizer bound to a meta-parameter vector."""

    def __init__(
        self,
        meta: np.ndarray,
        mask: FeatureMask = FeatureMask(),
        arch: MetaArch | None = None,
        separated: bool = False,
        zero_mean: str = "global",
    ):
        self.mask = mask
        self.arch = arch or MetaArch.for_mask(mask)
        if self.arch.n_inputs != mask.n_inputs or self.arch.n_outputs != mask.n_outputs:
            raise ConfigError("meta architecture does not match the feature mask", "optimizer.mask")
        if zero_mean not in ("global", "per_network"):
            raise ConfigError(f"unknown zero_mean mode {zero_mean!r}", "optimizer.zero_mean")
        self.separated = separated
        self.zero_mean = zero_mean
        self.meta = np.asarray(meta, dtype=np.float64)
        expected = meta_size(self.arch, separated)
        if self.meta.shape != (expected,):
            raise ConfigError(f"meta vector length {self.meta.shape[0]} != {expected}", "optimizer.meta")
        self._tensors: dict = {}

    @property
    def needs_dormancy(self) -> bool:
        return self.mask.dormancy and not self.mask.reduced

    def init(self, params) -> OptimizerState:
        return init_opt_state(params.layout.size, self.arch)

    def step(self, state, grad, params, signals, rng):
        tensors = self._tensors.get(params.layout)
        if tensors is None:
            tensors = self._tensors[params.layout] = TensorLayout.from_agent(params.layout)
        flat, state, info = open_step(
            self.meta, self.arch, state, grad, params.flat, signals, tensors, rng,
            mask=self.mask, separated=self.separated, zero_mean=self.zero_mean,
        )
        return params.replace(flat), state, info


def meta_size(arch: MetaArch, separated: bool = False) -> int:
    return arch.size * (2 if separated else 1)


def init_meta(arch: MetaArch, rng: np.random.Generator, separated: bool = False) -> np.ndarray:
    if separated:
        return np.concatenate([arch.init(rng), arch.init(rng)])
    return arch.init(rng)
