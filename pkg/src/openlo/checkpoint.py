"""Binary checkpoint: magic, length-prefixed JSON descriptor, little-endian float64 payload."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from openlo.es import EsState
from openlo.learned import FeatureMask, MetaArch, meta_size

MAGIC = b"OPENOPT1"
VERSION = 1
_LEN = struct.Struct("<I")
_F64 = np.dtype("<f8")


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    meta: np.ndarray
    arch: MetaArch
    mask: FeatureMask
    separated: bool = False
    es_state: EsState | None = None
    provenance: dict = field(default_factory=dict)

    def descriptor(self) -> dict:
        """Architecture part of the header; two checkpoints are compatible iff these match."""
        return {
            "arch": {
                "n_inputs": self.arch.n_inputs,
                "hidden": self.arch.hidden,
                "width": self.arch.width,
                "n_outputs": self.arch.n_outputs,
            },
            "mask": self.mask.to_dict(),
            "separated": self.separated,
        }


def _header(ckpt: Checkpoint) -> tuple[dict, list[np.ndarray]]:
    n = meta_size(ckpt.arch, ckpt.separated)
    if ckpt.meta.shape != (n,):
        raise CheckpointError(f"meta vector length {ckpt.meta.shape} does not match architecture ({n},)")
    vectors = [ckpt.meta]
    head = {"version": VERSION, **ckpt.descriptor(), "meta_len": n, "provenance": ckpt.provenance}
    es = ckpt.es_state
    if es is not None:
        head["es_state"] = {
            "sigma": es.sigma,
            "lr": es.lr,
            "generation": es.generation,
            "best_fitness": es.best_fitness,
            "best_generation": es.best_generation,
            "has_best": es.best_mean is not None,
        }
        vectors += [es.mean, es.m, es.v]
        if es.best_mean is not None:
            vectors.append(es.best_mean)
    return head, vectors


def to_bytes(ckpt: Checkpoint) -> bytes:
    head, vectors = _header(ckpt)
    text = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(v, dtype=_F64).tobytes() for v in vectors)
    return MAGIC + _LEN.pack(len(text)) + text + payload


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    pos = len(MAGIC)
    try:
        (n_text,) = _LEN.unpack_from(blob, pos)
        head = json.loads(blob[pos + _LEN.size : pos + _LEN.size + n_text].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    if head.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {head.get('version')!r}")
    data = np.frombuffer(blob, dtype=_F64, offset=pos + _LEN.size + n_text).astype(np.float64)
    arch = MetaArch(**head["arch"])
    mask = FeatureMask(**head["mask"])
    n = head["meta_len"]
    if n != meta_size(arch, head["separated"]):
        raise CheckpointError("descriptor meta_len disagrees with the architecture")
    es_head = head.get("es_state")
    n_vec = 1 + (0 if es_head is None else 3 + int(es_head["has_best"]))
    if data.size != n * n_vec:
        raise CheckpointError(f"payload has {data.size} values, descriptor implies {n * n_vec}")
    parts = data.reshape(n_vec, n)
    es = None
    if es_head is not None:
        es = EsState(
            mean=parts[1].copy(),
            sigma=es_head["sigma"],
            lr=es_head["lr"],
            m=parts[2].copy(),
            v=parts[3].copy(),
            generation=es_head["generation"],
            best_mean=parts[4].copy() if es_head["has_best"] else None,
            best_fitness=es_head["best_fitness"],
            best_generation=es_head["best_generation"],
        )
    return Checkpoint(parts[0].copy(), arch, mask, head["separated"], es, head.get("provenance", {}))


def save(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from None
    return from_bytes(blob)
