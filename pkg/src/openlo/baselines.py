"""Handcrafted optimizers: Adam, RMSprop, Lion and SGD with momentum.

Each ``*_step`` is a pure function ``(state, grad, params) -> (params, state)``.
Parameters are minimised: the update is subtracted. When ``anneal`` is set the
learning rate is multiplied by ``1 - tp`` (training proportion), decaying
linearly to zero over training.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from openlo.errors import ConfigError
from openlo.interface import UpdateInfo


@dataclass(frozen=True)
class BaselineState:
    name: str
    lr: float
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    anneal: bool = False
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    count: int = 0

    def effective_lr(self, tp: float) -> float:
        return self.lr * (1.0 - tp) if self.anneal else self.lr


def init_state(name: str, n_params: int, lr: float, **hyper) -> BaselineState:
    if name not in STEPS:
        raise ConfigError(f"unknown optimizer {name!r}; choose from {sorted(STEPS)}", "optimizer.name")
    zeros = np.zeros(n_params)
    v = zeros.copy() if name in ("adam", "rmsprop") else None
    m = None if name == "rmsprop" else zeros.copy()
    return BaselineState(name=name, lr=lr, m=m, v=v, **hyper)


def adam_step(state: BaselineState, grad, params, tp: float = 0.0):
    count = state.count + 1
    m = state.b1 * state.m + (1 - state.b1) * grad
    v = state.b2 * state.v + (1 - state.b2) * grad * grad
    m_hat = m / (1 - state.b1**count)
    v_hat = v / (1 - state.b2**count)
    update = state.effective_lr(tp) * m_hat / (np.sqrt(v_hat) + state.eps)
    return params - update, replace(state, m=m, v=v, count=count)


def rmsprop_step(state: BaselineState, grad, params, tp: float = 0.0):
    # ``b2`` is the squared-gradient decay.
    v = state.b2 * state.v + (1 - state.b2) * grad * grad
    update = state.effective_lr(tp) * grad / (np.sqrt(v) + state.eps)
    return params - update, replace(state, v=v, count=state.count + 1)


def lion_step(state: BaselineState, grad, params, tp: float = 0.0):
    c = state.b1 * state.m + (1 - state.b1) * grad
    update = state.effective_lr(tp) * np.sign(c)
    m = state.b2 * state.m + (1 - state.b2) * grad
    return params - update, replace(state, m=m, count=state.count + 1)


def sgd_momentum_step(state: BaselineState, grad, params, tp: float = 0.0):
    # ``b1`` is the momentum coefficient.
    m = state.b1 * state.m + grad
    return params - state.effective_lr(tp) * m, replace(state, m=m, count=state.count + 1)


STEPS = {
    "adam": adam_step,
    "rmsprop": rmsprop_step,
    "lion": lion_step,
    "sgd": sgd_momentum_step,
}

DEFAULTS = {
    "adam": dict(lr=1e-4, b1=0.99, b2=0.99, anneal=True),
    "rmsprop": dict(lr=1e-3, b2=0.99, anneal=False),
    "lion": dict(lr=3e-4, b1=0.9, b2=0.99, anneal=True),
    "sgd": dict(lr=1e-2, b1=0.9, anneal=False),
}


class BaselineOptimizer:
    """Adapter exposing a handcrafted optimizer through the training-loop interface."""

    needs_dormancy = False

    def __init__(self, name: str, **hyper):
        if name not in STEPS:
            raise ConfigError(f"unknown optimizer {name!r}; choose from {sorted(STEPS)}", "optimizer.name")
        self.name = name
        self.hyper = {**DEFAULTS[name], **hyper}

    def init(self, params) -> BaselineState:
        return init_state(self.name, params.layout.size, **self.hyper)

    def step(self, state, grad, params, signals, rng=None):
        new_flat, state = STEPS[self.name](state, grad, params.flat, tp=signals.tp)
        update = params.flat - new_flat
        return params.replace(new_flat), state, UpdateInfo(update=update, raw=update)

