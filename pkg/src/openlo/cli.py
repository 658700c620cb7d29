"""Command line entry point: ``openlo <mode> --config run.toml``.

Exit codes: 0 success, 1 invalid configuration or inputs, 2 runtime failure.
Everything is validated before the output directory is created.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from openlo import checkpoint as ckpt_io
from openlo import rng as rngmod
from openlo.analysis import (
    REFERENCES,
    SERIES_COLUMNS,
    Series,
    bootstrap_ci,
    cosine_similarity_series,
    dormancy_series,
    iqm,
    normalized_stochasticity,
    normalized_update_magnitude,
)
from openlo.baselines import BaselineOptimizer
from openlo.checkpoint import Checkpoint, CheckpointError
from openlo.config import RunConfig, load_config
from openlo.errors import ConfigError, TrainingDiverged
from openlo.es import FITNESS_COLUMNS, EsState, GenerationReport, meta_train
from openlo.learned import init_meta
from openlo.ppo import METRIC_COLUMNS, train
from openlo.records import RecordsError, load_records, save_records
from openlo.tasks import LearnedOptimizerSpec, PpoFitness, evaluate_member

log = logging.getLogger("openlo")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
SUMMARY_COLUMNS = ("seed", "final_return", "failed", "dormancy_actor", "dormancy_critic")
ABLATION_COLUMNS = ("mask", "replicate", "validation_fitness", "iqm_return", "mean_return", "dormancy_actor")


class UsageError(Exception):
    """Invalid command line or referenced inputs (exit code 1)."""


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _prepare_out(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------- optimizers


def _expected_descriptor(spec: LearnedOptimizerSpec) -> dict:
    probe = Checkpoint(np.zeros(0), spec.arch, spec.mask, spec.separated)
    return probe.descriptor()


def _load_compatible(path: str, spec: LearnedOptimizerSpec) -> Checkpoint:
    ckpt = ckpt_io.load(path)
    want, got = _expected_descriptor(spec), ckpt.descriptor()
    if want != got:
        raise ConfigError(
            f"checkpoint {path} is incompatible: checkpoint descriptor {json.dumps(got, sort_keys=True)} "
            f"vs configured {json.dumps(want, sort_keys=True)}",
            "optimizer.checkpoint",
        )
    return ckpt


def resolve_optimizer(cfg: RunConfig):
    """Build the optimizer named in the config, loading a learned checkpoint if needed."""
    oc = cfg.optimizer
    if not oc.is_learned:
        return BaselineOptimizer(oc.name, **oc.hyper())
    if not oc.checkpoint:
        raise ConfigError("a learned optimizer needs a checkpoint path", "optimizer.checkpoint")
    spec = oc.learned_spec()
    return spec.build(_load_compatible(oc.checkpoint, spec).meta)


# ---------------------------------------------------------------- train / eval


def _run_seeds(cfg: RunConfig, optimizer, out: Path, per_seed: bool) -> bool:
    stride = cfg.run.record_stride or None
    rows, finals = [], []
    any_failed = False
    for s in cfg.run.seed_list():
        env_spec = cfg.env.task_for(s)
        try:
            res = train(optimizer, env_spec, cfg.ppo, s, record_stride=stride if per_seed else None)
        except TrainingDiverged as e:
            log.warning("seed %d diverged: %s", s, e)
            any_failed = True
            rows.append((s, None, True, None, None))
            continue
        finals.append(res.final_return)
        rows.append((s, res.final_return, False, res.metrics["dormancy_actor"][-1], res.metrics["dormancy_critic"][-1]))
        if per_seed:
            _write_csv(out / f"seed_{s}.csv", METRIC_COLUMNS, (tuple(r.values()) for r in res.metric_rows()))
            if stride:
                save_records(out / f"records_seed_{s}.npz", res)
    stats = []
    if finals:
        ci = bootstrap_ci(finals)
        stats = [
            ("mean", float(np.mean(finals)), "", "", ""),
            ("iqm", ci.point, "", "", ""),
            ("iqm_ci_low", ci.low, "", "", ""),
            ("iqm_ci_high", ci.high, "", "", ""),
        ]
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows + stats)
    return not any_failed


def cmd_train(cfg: RunConfig, out: Path, per_seed: bool = True) -> int:
    optimizer = resolve_optimizer(cfg)
    _prepare_out(out)
    _write_json(out / "config.json", {"config": cfg.to_dict(), "config_hash": cfg.config_hash()})
    ok = _run_seeds(cfg, optimizer, out, per_seed)
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_eval(cfg: RunConfig, out: Path) -> int:
    return cmd_train(cfg, out, per_seed=False)


# ---------------------------------------------------------------- meta-training


def _validator(cfg: RunConfig, spec: LearnedOptimizerSpec):
    family = cfg.env.family()
    seeds = cfg.run.validation_seeds

    def validate(mean: np.ndarray) -> float:
        opt = spec.build(mean)
        vals = [evaluate_member(opt, family.sample(s), cfg.ppo, s) for s in seeds]
        returns = [v for v, failed in vals if not failed]
        return float(np.mean(returns)) if returns else float("-inf")

    return validate


def _fitness_rows_after(path: Path, generation: int) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [r for r in rows[1:] if int(r[0]) < generation]


def run_meta_train(
    cfg: RunConfig,
    spec: LearnedOptimizerSpec,
    out: Path,
    seed: int,
    workers: int,
    resume: EsState | None = None,
) -> EsState:
    """Meta-train one learned optimizer, writing the fitness log and checkpoints into ``out``."""
    fitness = PpoFitness(cfg.env.family(), cfg.ppo, spec)
    init = init_meta(spec.arch, rngmod.stream(seed, "meta/init"), spec.separated)
    log_path = out / "fitness_log.csv"
    kept = _fitness_rows_after(log_path, resume.generation) if resume is not None and log_path.exists() else []
    _write_csv(log_path, FITNESS_COLUMNS, kept)
    chash = cfg.config_hash()

    def on_generation(report: GenerationReport, state: EsState) -> None:
        with open(log_path, "a", newline="") as fh:
            csv.writer(fh).writerows(report.rows())
        log.info("generation %d: mean fitness %.4f", report.generation, float(np.nanmean(report.raw)))

    def on_checkpoint(generation: int, score: float, state: EsState) -> None:
        prov = {"config_hash": chash, "generation": generation, "validation_fitness": score, "seed": seed}
        ckpt_io.save(
            out / f"ckpt_gen{generation:04d}.bin",
            Checkpoint(state.mean, spec.arch, spec.mask, spec.separated, state, prov),
        )
        if state.best_generation == generation:
            best_prov = dict(prov, best=True)
            ckpt_io.save(out / "best.bin", Checkpoint(state.best_mean, spec.arch, spec.mask, spec.separated, None, best_prov))

    result = meta_train(
        fitness, init, cfg.es, seed,
        workers=workers, validate=_validator(cfg, spec), state=resume,
        on_generation=on_generation, on_checkpoint=on_checkpoint,
    )
    return result.state


def cmd_meta_train(cfg: RunConfig, out: Path, resume: str | None) -> int:
    spec = cfg.optimizer.learned_spec()
    state = None
    if resume:
        ckpt = _load_compatible(resume, spec)
        if ckpt.es_state is None:
            raise ConfigError(f"checkpoint {resume} carries no optimizer-search state", "--resume")
        state = ckpt.es_state
    _prepare_out(out)
    _write_json(out / "config.json", {"config": cfg.to_dict(), "config_hash": cfg.config_hash()})
    run_meta_train(cfg, spec, out, cfg.run.seed, cfg.run.workers, state)
    return EXIT_OK


# ---------------------------------------------------------------- ablation


def cmd_ablate(cfg: RunConfig, out: Path) -> int:
    masks = cfg.run.masks
    if not masks:
        log.info("no masks configured; nothing to do")
        return EXIT_OK
    _prepare_out(out)
    _write_json(out / "config.json", {"config": cfg.to_dict(), "config_hash": cfg.config_hash()})
    rows, failed_any = [], False
    seeds = cfg.run.seed_list()
    for mask in masks:
        spec = replace(cfg.optimizer, mask=mask).learned_spec()
        for j in range(cfg.run.k):
            sub = out / mask / f"rep{j}"
            sub.mkdir(parents=True, exist_ok=True)
            state = run_meta_train(cfg, spec, sub, rngmod.derive_seed(cfg.run.seed, f"ablate/{mask}", j), cfg.run.workers)
            opt = spec.build(state.best_mean if state.best_mean is not None else state.mean)
            finals, dorm = [], []
            for s in seeds:
                try:
                    res = train(opt, cfg.env.task_for(s), cfg.ppo, s)
                except TrainingDiverged:
                    failed_any = True
                    continue
                finals.append(res.final_return)
                dorm.append(res.metrics["dormancy_actor"][-1])
            rows.append((
                mask, j, state.best_fitness,
                iqm(finals) if finals else None,
                float(np.mean(finals)) if finals else None,
                float(np.mean(dorm)) if dorm else None,
            ))
    _write_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)
    return EXIT_RUNTIME if failed_any else EXIT_OK


# ---------------------------------------------------------------- analysis


def _write_series(path: Path, series: Series) -> None:
    _write_csv(path, SERIES_COLUMNS, series.rows())


def cmd_analyze(run_dir: Path, out: Path) -> int:
    if not run_dir.is_dir():
        raise UsageError(f"run directory {run_dir} does not exist")
    files = sorted(run_dir.glob("records_seed_*.npz"))
    if not files:
        raise UsageError(
            f"no update records in {run_dir}: the run was not recorded (set run.record_stride > 0 and rerun train)"
        )
    loaded = [(f, load_records(f)) for f in files]  # corrupt files fail before any output
    _prepare_out(out)
    for f, rec in loaded:
        seed = f.stem.removeprefix("records_seed_")
        d = out / f"seed_{seed}"
        d.mkdir(exist_ok=True)
        for ref in REFERENCES:
            _write_series(d / f"cosine_{ref}.csv", cosine_similarity_series(rec.records, ref, rec.stride))
        _write_series(d / "update_magnitude.csv", normalized_update_magnitude(rec.records, rec.stride))
        _write_series(d / "stochasticity.csv", normalized_stochasticity(rec.records, rec.actor_mask, rec.stride))
        for net in ("actor", "critic"):
            _write_series(d / f"dormancy_{net}.csv", dormancy_series(rec.dormancy, rec.updates_per_batch, net, 0.0))
        _write_json(d / "metadata.json", {
            "record_stride": rec.stride,
            "n_records": len(rec.records),
            "updates_per_batch": rec.updates_per_batch,
            "dormancy_tau": 0.0,
            "source": str(f),
        })
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="openlo", description="Learned optimizers for PPO.")
    sub = p.add_subparsers(dest="mode", required=True)
    for mode in ("meta-train", "train", "eval", "ablate"):
        sp = sub.add_parser(mode)
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.add_argument("--out", help="override run.out")
        sp.add_argument("--workers", type=int, help="override run.workers")
        if mode == "meta-train":
            sp.add_argument("--resume", help="checkpoint with optimizer-search state to continue from")
    sp = sub.add_parser("analyze")
    sp.add_argument("run_dir", help="output directory of a recorded train run")
    sp.add_argument("--out", help="where to write analysis CSVs (default: RUN_DIR/analysis)")
    for sp in sub.choices.values():
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    run = cfg.run
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.out is not None:
        run = replace(run, out=args.out)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("must be >= 1", "--workers")
        run = replace(run, workers=args.workers)
    return replace(cfg, run=run)


def _dispatch(args) -> int:
    if args.mode == "analyze":
        run_dir = Path(args.run_dir)
        return cmd_analyze(run_dir, Path(args.out) if args.out else run_dir / "analysis")
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(cfg.run.out)
    if args.mode == "meta-train":
        return cmd_meta_train(cfg, out, args.resume)
    if args.mode == "train":
        return cmd_train(cfg, out)
    if args.mode == "eval":
        return cmd_eval(cfg, out)
    return cmd_ablate(cfg, out)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (CheckpointError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except RecordsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (TrainingDiverged, OSError, FloatingPointError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
