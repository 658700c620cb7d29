from __future__ import annotations

import numpy as np
import pytest

from openlo.agent import AgentLayout, AgentParams
from openlo.baselines import (
    BaselineOptimizer,
    adam_step,
    init_state,
    lion_step,
    rmsprop_step,
    sgd_momentum_step,
)
from openlo.errors import ConfigError
from openlo.interface import PpoSignals


def test_adam_first_step_is_lr_times_sign():
    # bias correction makes the first Adam step lr * g / (|g| + eps)
    s = init_state("adam", 3, lr=0.1, b1=0.9, b2=0.999, eps=0.0)
    p, s = adam_step(s, np.array([2.0, -0.5, 3.0]), np.zeros(3))
    assert np.allclose(p, [-0.1, 0.1, -0.1])
    assert s.count == 1


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(5, 4))
    s = init_state("adam", 4, lr=0.01, b1=0.8, b2=0.95)
    p = np.ones(4)
    m = v = np.zeros(4)
    ref = np.ones(4)
    for t, g in enumerate(grads, start=1):
        p, s = adam_step(s, g, p)
        m = 0.8 * m + 0.2 * g
        v = 0.95 * v + 0.05 * g * g
        ref = ref - 0.01 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.95**t)) + 1e-8)
    assert np.allclose(p, ref, rtol=0, atol=1e-14)


def test_rmsprop_lion_sgd_hand_steps():
    g = np.array([1.0, -2.0])
    p, _ = rmsprop_step(init_state("rmsprop", 2, lr=0.1, b2=0.75, eps=0.0), g, np.zeros(2))
    assert np.allclose(p, -0.1 * g / np.sqrt(0.25 * g * g))
    p, s = lion_step(init_state("lion", 2, lr=0.1, b1=0.9, b2=0.99), g, np.zeros(2))
    assert np.allclose(p, [-0.1, 0.1])
    assert np.allclose(s.m, 0.01 * g)
    s = init_state("sgd", 2, lr=0.5, b1=0.9)
    p, s = sgd_momentum_step(s, g, np.zeros(2))
    p, s = sgd_momentum_step(s, g, p)
    assert np.allclose(p, -0.5 * (g + 1.9 * g))


@pytest.mark.parametrize("name", ["adam", "rmsprop", "lion", "sgd"])
def test_annealing_scales_with_remaining_training(name):
    g = np.array([0.3, -0.7])
    s = init_state(name, 2, lr=0.1, anneal=True)
    from openlo.baselines import STEPS

    full, _ = STEPS[name](s, g, np.zeros(2), tp=0.0)
    half, _ = STEPS[name](s, g, np.zeros(2), tp=0.5)
    done, _ = STEPS[name](s, g, np.zeros(2), tp=1.0)
    assert np.allclose(half, 0.5 * full)
    assert np.all(done == 0)


def test_adapter_reports_update_and_rejects_unknown_names():
    layout = AgentLayout(2, 2, width=2, n_hidden=1)
    params = AgentParams(np.zeros(layout.size), layout)
    opt = BaselineOptimizer("sgd", lr=1.0, b1=0.0)
    state = opt.init(params)
    g = np.arange(layout.size, dtype=float)
    new, _, info = opt.step(state, g, params, PpoSignals(0, 0.0, 0.0))
    assert np.allclose(new.flat, -g)
    assert np.allclose(info.update, g)
    assert info.noise is None
    with pytest.raises(ConfigError):
        BaselineOptimizer("adagrad")
