"""Update-behaviour diagnostics computed from recorded training runs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from openlo.agent import DormancyScores
from openlo.learned import BETAS
from openlo.ppo import UpdateRecord

PARAM_GUARD = 1e-12
REFERENCES = ("grad",) + tuple(f"m{b}" for b in BETAS)
SERIES_COLUMNS = ("update_index", "value", "n_excluded")


@dataclass
class Series:
    update_index: np.ndarray
    value: np.ndarray  # nan marks a null datum
    n_excluded: np.ndarray
    stride: int | None = None

    def __len__(self) -> int:
        return len(self.value)

    def rows(self):
        for i, v, n in zip(self.update_index, self.value, self.n_excluded):
            yield int(i), (None if np.isnan(v) else float(v)), int(n)


def _series(records, values, excluded=None, stride=None) -> Series:
    idx = np.array([r.index for r in records], dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    ex = np.zeros(len(values), dtype=np.int64) if excluded is None else np.asarray(excluded, dtype=np.int64)
    return Series(idx, values, ex, stride)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return float("nan")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def reference_vector(record: UpdateRecord, reference: str) -> np.ndarray:
    if reference == "grad":
        return record.grad
    try:
        k = REFERENCES.index(reference) - 1
    except ValueError:
        raise ValueError(f"unknown reference {reference!r}; choose from {REFERENCES}") from None
    return record.momenta[k]


def cosine_similarity_series(
    records: Sequence[UpdateRecord], reference: str = "grad", stride: int | None = None
) -> Series:
    """cos(u_t, ref_t) for each recorded update; zero-norm vectors give a null datum (nan)."""
    vals = [cosine(r.update, reference_vector(r, reference)) for r in records]
    return _series(records, vals, stride=stride)


def _guarded_ratio(num: np.ndarray, p: np.ndarray) -> tuple[float, int]:
    ok = np.abs(p) >= PARAM_GUARD
    n_ex = int(np.sum(~ok))
    if not ok.any():
        return float("nan"), n_ex
    return float(np.mean(np.abs(num[ok] / p[ok]))), n_ex


def normalized_update_magnitude(records: Sequence[UpdateRecord], stride: int | None = None) -> Series:
    """E_i |u_hat_i / p_i| of the deterministic update part; tiny |p_i| are excluded and counted."""
    out = [_guarded_ratio(r.raw, r.params) for r in records]
    return _series(records, [v for v, _ in out], [n for _, n in out], stride)


def normalized_stochasticity(
    records: Sequence[UpdateRecord], actor_mask: np.ndarray, stride: int | None = None
) -> Series:
    """E_i |delta_i / p_i| over actor parameters; zero for optimizers without a noise head."""
    vals, excl = [], []
    for r in records:
        p = r.params[actor_mask]
        if r.delta is None or r.noise is None:
            vals.append(0.0)
            excl.append(int(np.sum(np.abs(p) < PARAM_GUARD)))
            continue
        v, n = _guarded_ratio(r.delta[actor_mask], p)
        vals.append(v)
        excl.append(n)
    return _series(records, vals, excl, stride)


def dormant_fraction(scores: DormancyScores, network: str, tau: float = 0.0) -> float:
    return scores.dormant_fraction(network, tau)


def dormancy_series(
    dormancy: Sequence[DormancyScores], updates_per_batch: int, network: str, tau: float = 0.0
) -> Series:
    """Fraction of hidden neurons with score <= tau, repeated for every update of a batch."""
    per_batch = [dormant_fraction(d, network, tau) for d in dormancy]
    vals = np.repeat(per_batch, updates_per_batch)
    idx = np.arange(len(vals), dtype=np.int64)
    return Series(idx, vals, np.zeros(len(vals), dtype=np.int64), 1)


def iqm(values) -> float:
    """Interquartile mean: mean of the middle 50% of values."""
    values = np.asarray(values, dtype=np.float64)
    return float(stats.trim_mean(values, 0.25))


@dataclass(frozen=True)
class Interval:
    point: float
    low: float
    high: float


def bootstrap_ci(values, statistic=iqm, confidence: float = 0.95, n_resamples: int = 2000, seed: int = 0) -> Interval:
    """Percentile bootstrap confidence interval."""
    values = np.asarray(values, dtype=np.float64)
    point = float(statistic(values))
    if len(values) < 2 or np.all(values == values[0]):
        return Interval(point, point, point)
    res = stats.bootstrap(
        (values,),
        lambda x, axis=-1: np.apply_along_axis(statistic, axis, x),
        confidence_level=confidence,
        n_resamples=n_resamples,
        method="percentile",
        random_state=np.random.default_rng(seed),
        vectorized=True,
    )
    return Interval(point, float(res.confidence_interval.low), float(res.confidence_interval.high))
