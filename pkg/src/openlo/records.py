"""Persist update records and dormancy logs of a training run as ``.npz``."""

from __future__ import annotations

import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from openlo.agent import NETWORKS, DormancyScores
from openlo.ppo import TrainResult, UpdateRecord


class RecordsError(RuntimeError):
    pass


@dataclass
class RunRecords:
    records: list[UpdateRecord]
    actor_mask: np.ndarray
    stride: int
    dormancy: list[DormancyScores]
    updates_per_batch: int


def save_records(path: str | Path, result: TrainResult) -> None:
    recs = result.records
    n = result.params.layout.size

    def stack(attr):
        vals = [getattr(r, attr) for r in recs]
        present = np.array([v is not None for v in vals], dtype=bool)
        arr = np.stack([v if v is not None else np.full(n, np.nan) for v in vals]) if vals else np.zeros((0, n))
        return arr, present

    arrays = {
        "index": np.array([r.index for r in recs], dtype=np.int64),
        "stride": np.array(result.record_stride or 0),
        "updates_per_batch": np.array(result.updates_per_batch),
        "actor_mask": result.actor_mask,
        "momenta": np.stack([r.momenta for r in recs]) if recs else np.zeros((0, 6, n)),
    }
    for attr in ("update", "raw", "grad", "params", "delta", "noise"):
        arrays[attr], arrays[f"has_{attr}"] = stack(attr)
    for net in NETWORKS:
        n_layers = len(result.dormancy[0].scores[net]) if result.dormancy else 0
        for i in range(n_layers):
            arrays[f"dorm_{net}_{i}"] = np.stack([d.scores[net][i] for d in result.dormancy])
    np.savez_compressed(path, **arrays)


def load_records(path: str | Path) -> RunRecords:
    try:
        with np.load(path) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as e:
        raise RecordsError(f"records file {path} is corrupt or unreadable: {e}") from None
    required = ("index", "update", "raw", "grad", "params", "momenta", "actor_mask", "stride")
    missing = [k for k in required if k not in data]
    if missing:
        raise RecordsError(f"records file {path} is corrupt: missing arrays {missing}")

    def opt(attr, i):
        return data[attr][i] if data[f"has_{attr}"][i] else None

    records = [
        UpdateRecord(
            index=int(data["index"][i]),
            update=data["update"][i],
            raw=data["raw"][i],
            delta=opt("delta", i),
            noise=opt("noise", i),
            grad=data["grad"][i],
            momenta=data["momenta"][i],
            params=data["params"][i],
        )
        for i in range(len(data["index"]))
    ]
    per_net = {net: sorted(k for k in data if k.startswith(f"dorm_{net}_")) for net in NETWORKS}
    n_batches = len(data[per_net["actor"][0]]) if per_net["actor"] else 0
    per_net = {net: sorted(keys, key=lambda k: int(k.rsplit("_", 1)[1])) for net, keys in per_net.items()}
    dormancy = [
        DormancyScores({net: [data[k][b] for k in per_net[net]] for net in NETWORKS}, [])
        for b in range(n_batches)
    ]
    return RunRecords(records, data["actor_mask"].astype(bool), int(data["stride"]), dormancy,
                      int(data.get("updates_per_batch", 1)))
