"""TOML run configuration with strict key checking."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from openlo.baselines import DEFAULTS as BASELINE_DEFAULTS
from openlo.envs import ChainSpec, GridworldRanges
from openlo.errors import ConfigError
from openlo.es import EsConfig
from openlo.learned import NAMED_MASKS, FeatureMask
from openlo.ppo import PpoConfig
from openlo.tasks import DeepSeaFamily, FixedTask, GridworldFamily, LearnedOptimizerSpec

MODES = ("meta-train", "train", "eval", "ablate", "analyze")
ENV_KINDS = ("deepsea", "gridworld", "chain")
OPTIMIZERS = tuple(BASELINE_DEFAULTS) + ("open",)


def _check_keys(section: str, given: dict, allowed) -> None:
    for key in given:
        if key not in allowed:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(allowed))})", f"{section}.{key}")


def _typed(section: str, key: str, value, kind):
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"expected {kind.__name__}, got {value!r}", f"{section}.{key}")
    return value


def _build_dataclass(cls, section: str, raw: dict, exclude=()):
    names = {f.name: f for f in fields(cls) if f.name not in exclude}
    _check_keys(section, raw, names)
    kwargs = {}
    for k, v in raw.items():
        default = names[k].default
        kind = type(default) if default is not None else type(v)
        kwargs[k] = _typed(section, k, v, kind)
    try:
        return cls(**kwargs)
    except ConfigError as e:
        raise ConfigError(e.message, e.field or section) from None


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "deepsea"
    size: int | None = None
    min_size: int | None = None
    max_size: int | None = None
    randomize_actions: bool = True
    length: int = 5
    horizon: int | None = None
    task_seed: int | None = None
    ranges: dict = field(default_factory=dict)

    def family(self):
        if self.kind == "deepsea":
            lo = self.min_size if self.min_size is not None else self.size
            hi = self.max_size if self.max_size is not None else self.size
            if lo is None or hi is None:
                raise ConfigError("set size or min_size/max_size", "env.size")
            return DeepSeaFamily(lo, hi, self.randomize_actions)
        if self.kind == "gridworld":
            return GridworldFamily(_ranges(self.ranges))
        return FixedTask(ChainSpec(self.length, self.horizon))

    def task_for(self, seed: int):
        """Environment used by a training seed (a fixed ``task_seed`` pins the task)."""
        return self.family().sample(self.task_seed if self.task_seed is not None else seed)


def _ranges(raw: dict) -> GridworldRanges:
    allowed = {f.name for f in fields(GridworldRanges)}
    _check_keys("env.ranges", raw, allowed)
    kw = {}
    for k, v in raw.items():
        if not (isinstance(v, list) and len(v) == 2):
            raise ConfigError("expected a [min, max] pair", f"env.ranges.{k}")
        kw[k] = tuple(v)
    try:
        return GridworldRanges(**kw)
    except ConfigError as e:
        raise ConfigError(e.message, e.field or "env.ranges") from None


def _env(raw: dict) -> EnvConfig:
    allowed = {f.name for f in fields(EnvConfig)}
    _check_keys("env", raw, allowed)
    kind = raw.get("kind", "deepsea")
    if kind not in ENV_KINDS:
        raise ConfigError(f"must be one of {ENV_KINDS}", "env.kind")
    for k in ("size", "min_size", "max_size", "length", "horizon", "task_seed"):
        if k in raw:
            _typed("env", k, raw[k], int)
    if "randomize_actions" in raw:
        _typed("env", "randomize_actions", raw["randomize_actions"], bool)
    if "ranges" in raw and not isinstance(raw["ranges"], dict):
        raise ConfigError("expected a table", "env.ranges")
    cfg = EnvConfig(**raw)
    cfg.family()  # validates
    return cfg


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    lr: float | None = None
    b1: float | None = None
    b2: float | None = None
    eps: float | None = None
    anneal: bool | None = None
    checkpoint: str | None = None
    mask: str = "none"
    disable: tuple[str, ...] = ()
    separated: bool = False
    large: bool = False

    @property
    def is_learned(self) -> bool:
        return self.name == "open"

    def feature_mask(self) -> FeatureMask:
        mask = FeatureMask.named(self.mask)
        if self.disable:
            flags = mask.to_dict()
            for name in self.disable:
                if name not in flags or name == "reduced":
                    raise ConfigError(f"unknown feature {name!r}", "optimizer.disable")
                flags[name] = False
            mask = FeatureMask(**flags)
        return mask

    def learned_spec(self) -> LearnedOptimizerSpec:
        return LearnedOptimizerSpec(self.feature_mask(), self.large, self.separated)

    def hyper(self) -> dict:
        return {k: getattr(self, k) for k in ("lr", "b1", "b2", "eps", "anneal") if getattr(self, k) is not None}


def _optimizer(raw: dict) -> OptimizerConfig:
    allowed = {f.name for f in fields(OptimizerConfig)}
    _check_keys("optimizer", raw, allowed)
    name = raw.get("name", "adam")
    if name not in OPTIMIZERS:
        raise ConfigError(f"must be one of {OPTIMIZERS}", "optimizer.name")
    for k in ("lr", "b1", "b2", "eps"):
        if k in raw:
            raw[k] = _typed("optimizer", k, raw[k], float)
    for k in ("anneal", "separated", "large"):
        if k in raw:
            _typed("optimizer", k, raw[k], bool)
    if "mask" in raw and raw["mask"] not in NAMED_MASKS:
        raise ConfigError(f"unknown mask; known: {sorted(NAMED_MASKS)}", "optimizer.mask")
    if "disable" in raw:
        raw["disable"] = tuple(raw["disable"])
    cfg = OptimizerConfig(**raw)
    cfg.feature_mask()
    return cfg


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    n_seeds: int = 1
    seeds: tuple[int, ...] = ()
    out: str = "runs/default"
    workers: int = 1
    record_stride: int = 0
    masks: tuple[str, ...] = ()
    k: int = 1
    validation_seeds: tuple[int, ...] = (1000, 1001, 1002, 1003)

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds else list(range(self.seed, self.seed + self.n_seeds))


def _run(raw: dict) -> RunSection:
    allowed = {f.name for f in fields(RunSection)}
    _check_keys("run", raw, allowed)
    for k in ("seed", "n_seeds", "workers", "record_stride", "k"):
        if k in raw:
            _typed("run", k, raw[k], int)
    for k in ("seeds", "masks", "validation_seeds"):
        if k in raw:
            if not isinstance(raw[k], list):
                raise ConfigError("expected a list", f"run.{k}")
            raw[k] = tuple(raw[k])
    for m in raw.get("masks", ()):
        if m not in NAMED_MASKS:
            raise ConfigError(f"unknown mask {m!r}; known: {sorted(NAMED_MASKS)}", "run.masks")
    cfg = RunSection(**raw)
    if cfg.workers < 1:
        raise ConfigError("must be >= 1", "run.workers")
    if cfg.n_seeds < 1 or cfg.k < 1:
        raise ConfigError("must be >= 1", "run.n_seeds")
    if cfg.record_stride < 0:
        raise ConfigError("must be >= 0", "run.record_stride")
    return cfg


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    ppo: PpoConfig
    optimizer: OptimizerConfig
    es: EsConfig
    run: RunSection

    def to_dict(self) -> dict[str, Any]:
        """Effective configuration with every default expanded."""
        return json.loads(json.dumps(asdict(self), sort_keys=True, default=list))

    def config_hash(self) -> str:
        return hash_config(self.to_dict())


def hash_config(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


SECTIONS = ("env", "ppo", "optimizer", "es", "run")


def parse_config(raw: dict, require: tuple[str, ...] = ("env",)) -> RunConfig:
    _check_keys("config", raw, SECTIONS)
    for name in SECTIONS:
        if name in raw and not isinstance(raw[name], dict):
            raise ConfigError("expected a table", name)
    for name in require:
        if name not in raw:
            raise ConfigError("missing required section", name)
    return RunConfig(
        env=_env(dict(raw.get("env", {}))),
        ppo=_build_dataclass(PpoConfig, "ppo", dict(raw.get("ppo", {}))),
        optimizer=_optimizer(dict(raw.get("optimizer", {}))),
        es=_build_dataclass(EsConfig, "es", dict(raw.get("es", {}))),
        run=_run(dict(raw.get("run", {}))),
    )


def load_config(path: str | Path, require: tuple[str, ...] = ("env",)) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", "--config") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}", "--config") from None
    return parse_config(raw, require)
