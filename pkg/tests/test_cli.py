from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from openlo import checkpoint as ckpt_io
from openlo.checkpoint import Checkpoint, CheckpointError
from openlo.cli import main
from openlo.config import hash_config, load_config, parse_config
from openlo.errors import ConfigError
from openlo.es import EsConfig, init_es_state
from openlo.learned import FeatureMask, MetaArch, init_meta, meta_size

TINY_PPO = """
[ppo]
n_envs = 4
n_steps = 8
total_timesteps = 128
n_minibatch = 2
n_epochs = 1
"""

GRID = """
[env]
kind = "gridworld"
ranges = {grid_size = [4, 4], max_steps = [20, 20], n_objects = [1, 1], n_walls = [2, 2]}
"""

DEEPSEA = """
[env]
kind = "deepsea"
size = 4
"""


def write(tmp_path: Path, name: str, text: str) -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path: Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def meta_config(tmp_path, out="meta", gens=2, extra=""):
    return write(tmp_path, f"{out}.toml", GRID + TINY_PPO + f"""
[optimizer]
name = "open"
separated = true

[es]
pop_size = 4
n_generations = {gens}
eval_freq = 1
{extra}
[run]
out = "{tmp_path / out}"
validation_seeds = [1]
""")


# ---------------------------------------------------------------- config


def test_unknown_key_names_field():
    with pytest.raises(ConfigError) as e:
        parse_config({"env": {"kind": "deepsea", "size": 4}, "ppo": {"n_env": 4}})
    assert e.value.field == "ppo.n_env"


def test_missing_env_section_names_field(tmp_path):
    with pytest.raises(ConfigError) as e:
        parse_config({"ppo": {}})
    assert e.value.field == "env"
    cfg = write(tmp_path, "c.toml", TINY_PPO)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize(
    "raw, field",
    [
        ({"env": {"kind": "lake"}}, "env.kind"),
        ({"env": {"size": "4"}}, "env.size"),
        ({"env": {"size": 1}}, "env.size"),
        ({"env": {"size": 4}, "optimizer": {"name": "adagrad"}}, "optimizer.name"),
        ({"env": {"size": 4}, "optimizer": {"mask": "no_everything"}}, "optimizer.mask"),
        ({"env": {"size": 4}, "es": {"pop_size": 3}}, "es.pop_size"),
        ({"env": {"size": 4}, "run": {"masks": ["no_TP", "bogus"]}}, "run.masks"),
        ({"env": {"kind": "gridworld", "ranges": {"grid_size": [5, 4]}}}, "env.ranges"),
    ],
)
def test_invalid_values_report_field(raw, field):
    with pytest.raises(ConfigError) as e:
        parse_config(raw)
    assert e.value.field == field


def test_defaults_expand_and_hash_is_stable(tmp_path):
    cfg = load_config(write(tmp_path, "c.toml", DEEPSEA))
    d = cfg.to_dict()
    assert d["ppo"]["n_envs"] > 0 and d["es"]["pop_size"] == 64
    assert cfg.config_hash() == hash_config(json.loads(json.dumps(d)))


def test_ablation_mask_set_accepted():
    masks = ["no_TP", "no_BP", "no_dormancy", "no_layer", "no_stochasticity", "none"]
    cfg = parse_config({"env": {"size": 4}, "run": {"masks": masks}})
    assert cfg.run.masks == tuple(masks)


# ---------------------------------------------------------------- checkpoint


def _ckpt(with_state: bool) -> Checkpoint:
    mask = FeatureMask.named("no_dormancy")
    arch = MetaArch.for_mask(mask)
    meta = init_meta(arch, np.random.default_rng(0), separated=True)
    state = None
    if with_state:
        state = init_es_state(meta + 1.0, EsConfig())
        state = type(state)(**{**state.__dict__, "best_mean": meta * 2, "best_fitness": 0.25, "generation": 9})
    return Checkpoint(meta, arch, mask, True, state, {"config_hash": "ab", "generation": 9})


@pytest.mark.parametrize("with_state", [False, True])
def test_checkpoint_roundtrip_is_byte_identical(tmp_path, with_state):
    c = _ckpt(with_state)
    ckpt_io.save(tmp_path / "a.bin", c)
    back = ckpt_io.load(tmp_path / "a.bin")
    ckpt_io.save(tmp_path / "b.bin", back)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert np.array_equal(back.meta, c.meta) and back.descriptor() == c.descriptor()
    assert back.provenance == c.provenance
    if with_state:
        assert back.es_state.generation == 9 and np.array_equal(back.es_state.best_mean, c.es_state.best_mean)


def test_checkpoint_layout_and_corruption(tmp_path):
    blob = ckpt_io.to_bytes(_ckpt(False))
    assert blob[:8] == b"OPENOPT1"
    n = int.from_bytes(blob[8:12], "little")
    head = json.loads(blob[12 : 12 + n])
    assert head["meta_len"] == meta_size(MetaArch.for_mask(FeatureMask.named("no_dormancy")), True)
    assert len(blob) == 12 + n + 8 * head["meta_len"]
    with pytest.raises(CheckpointError):
        ckpt_io.from_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError):
        ckpt_io.from_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        ckpt_io.load(tmp_path / "missing.bin")


# ---------------------------------------------------------------- commands


def test_meta_train_writes_log_and_checkpoints(tmp_path):
    assert main(["meta-train", "--config", str(meta_config(tmp_path))]) == 0
    out = tmp_path / "meta"
    rows = read_csv(out / "fitness_log.csv")
    assert rows[0] == ["generation", "member", "task_seed", "raw_fitness", "shaped_fitness", "failed"]
    assert len(rows) - 1 == 8
    assert (out / "ckpt_gen0001.bin").exists() and (out / "ckpt_gen0002.bin").exists()
    best = ckpt_io.load(out / "best.bin")
    cfg = load_config(tmp_path / "meta.toml")
    assert best.provenance["config_hash"] == json.loads((out / "config.json").read_text())["config_hash"]
    assert best.provenance["config_hash"] == cfg.config_hash()


def test_meta_train_resume_continues(tmp_path):
    full_cfg = meta_config(tmp_path, "full", gens=3)
    assert main(["meta-train", "--config", str(full_cfg)]) == 0
    part_cfg = meta_config(tmp_path, "part", gens=3)
    assert main(["meta-train", "--config", str(part_cfg)]) == 0
    # restart from the first snapshot, as if the run had stopped there
    snap = tmp_path / "part" / "ckpt_gen0001.bin"
    assert main(["meta-train", "--config", str(part_cfg), "--resume", str(snap)]) == 0
    full = read_csv(tmp_path / "full" / "fitness_log.csv")
    resumed = read_csv(tmp_path / "part" / "fitness_log.csv")
    assert resumed == full
    gens = [int(r[0]) for r in resumed[1:]]
    assert gens == sorted(gens) and set(gens) == {0, 1, 2}
    seeds_by_gen = {g: {r[2] for r in resumed[1:] if int(r[0]) == g} for g in range(3)}
    assert not (seeds_by_gen[1] & seeds_by_gen[2])


def test_meta_train_is_identical_across_workers(tmp_path):
    a = meta_config(tmp_path, "w1")
    b = meta_config(tmp_path, "w4")
    assert main(["meta-train", "--config", str(a), "--workers", "1"]) == 0
    assert main(["meta-train", "--config", str(b), "--workers", "4"]) == 0
    assert (tmp_path / "w1" / "fitness_log.csv").read_bytes() == (tmp_path / "w4" / "fitness_log.csv").read_bytes()


def _train_config(tmp_path, name, body):
    return write(tmp_path, f"{name}.toml", DEEPSEA + TINY_PPO + body + f'\n[run]\nout = "{tmp_path / name}"\n')


def test_train_sixteen_seeds(tmp_path):
    cfg = _train_config(tmp_path, "t16", '[optimizer]\nname = "adam"\n')
    text = cfg.read_text().replace("[run]\n", "[run]\nn_seeds = 16\n")
    cfg.write_text(text)
    assert main(["train", "--config", str(cfg)]) == 0
    out = tmp_path / "t16"
    assert len(list(out.glob("seed_*.csv"))) == 16
    summary = read_csv(out / "summary.csv")
    labels = [r[0] for r in summary[1:]]
    assert labels[:16] == [str(s) for s in range(16)]
    assert {"mean", "iqm"} <= set(labels)


def test_train_is_deterministic(tmp_path):
    body = '[optimizer]\nname = "adam"\n'
    for name in ("d1", "d2"):
        assert main(["train", "--config", str(_train_config(tmp_path, name, body)), "--seed", "3"]) == 0
    assert (tmp_path / "d1" / "seed_3.csv").read_bytes() == (tmp_path / "d2" / "seed_3.csv").read_bytes()


def test_train_refuses_mismatched_checkpoint(tmp_path):
    c = _ckpt(False)
    ckpt_io.save(tmp_path / "x.bin", c)
    body = f'[optimizer]\nname = "open"\nseparated = true\nmask = "none"\ncheckpoint = "{tmp_path / "x.bin"}"\n'
    cfg = _train_config(tmp_path, "mm", body)
    assert main(["train", "--config", str(cfg)]) == 1
    assert not (tmp_path / "mm").exists()
    ok = _train_config(tmp_path, "ok", body.replace('"none"', '"no_dormancy"'))
    assert main(["train", "--config", str(ok)]) == 0


def test_mismatch_message_cites_both_descriptors(tmp_path, capsys):
    ckpt_io.save(tmp_path / "x.bin", _ckpt(False))
    body = f'[optimizer]\nname = "open"\nseparated = true\ncheckpoint = "{tmp_path / "x.bin"}"\n'
    main(["train", "--config", str(_train_config(tmp_path, "mm", body))])
    err = capsys.readouterr().err
    assert err.count('"dormancy": false') == 1 and err.count('"dormancy": true') == 1


def test_eval_requires_existing_checkpoint(tmp_path):
    body = f'[optimizer]\nname = "open"\ncheckpoint = "{tmp_path / "nope.bin"}"\n'
    assert main(["eval", "--config", str(_train_config(tmp_path, "ev", body))]) == 1


def test_eval_writes_summary_only(tmp_path):
    cfg = _train_config(tmp_path, "ev", '[optimizer]\nname = "rmsprop"\n')
    cfg.write_text(cfg.read_text().replace("[run]\n", "[run]\nn_seeds = 3\n"))
    assert main(["eval", "--config", str(cfg)]) == 0
    out = tmp_path / "ev"
    assert not list(out.glob("seed_*.csv"))
    labels = [r[0] for r in read_csv(out / "summary.csv")[1:]]
    assert {"iqm_ci_low", "iqm_ci_high"} <= set(labels)


def test_empty_ablation_is_noop(tmp_path):
    cfg = _train_config(tmp_path, "ab", "")
    assert main(["ablate", "--config", str(cfg)]) == 0
    assert not (tmp_path / "ab").exists()


def test_ablation_writes_aggregate(tmp_path):
    cfg = meta_config(tmp_path, "abl", gens=1)
    cfg.write_text(cfg.read_text().replace("[run]\n", '[run]\nmasks = ["no_TP", "none"]\nn_seeds = 2\n'))
    assert main(["ablate", "--config", str(cfg)]) == 0
    rows = read_csv(tmp_path / "abl" / "ablation.csv")
    assert rows[0] == ["mask", "replicate", "validation_fitness", "iqm_return", "mean_return", "dormancy_actor"]
    assert [r[0] for r in rows[1:]] == ["no_TP", "none"]


def test_analyze_recorded_run(tmp_path):
    cfg = _train_config(tmp_path, "rec", '[optimizer]\nname = "adam"\n')
    cfg.write_text(cfg.read_text().replace("[run]\n", "[run]\nrecord_stride = 3\n"))
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["analyze", str(tmp_path / "rec")]) == 0
    d = tmp_path / "rec" / "analysis" / "seed_0"
    rows = read_csv(d / "update_magnitude.csv")
    assert rows[0] == ["update_index", "value", "n_excluded"]
    assert [int(r[0]) for r in rows[1:4]] == [0, 3, 6]
    assert json.loads((d / "metadata.json").read_text())["record_stride"] == 3
    stoch = read_csv(d / "stochasticity.csv")
    assert all(float(r[1]) == 0.0 for r in stoch[1:])  # Adam has no noise head
    assert (d / "cosine_m0.9.csv").exists() and (d / "dormancy_actor.csv").exists()


def test_analyze_distinguishes_missing_from_corrupt(tmp_path, capsys):
    cfg = _train_config(tmp_path, "plain", '[optimizer]\nname = "adam"\n')
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["analyze", str(tmp_path / "plain")]) == 1
    assert "not recorded" in capsys.readouterr().err
    (tmp_path / "plain" / "records_seed_0.npz").write_bytes(b"garbage")
    assert main(["analyze", str(tmp_path / "plain")]) == 2
    assert "corrupt" in capsys.readouterr().err
