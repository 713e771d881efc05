"""Versioned checkpoint container.

Layout (little-endian):

    offset  size  field
    0       12    magic b"LSCORE-CKPT\\x00"
    12      4     format version, uint32 (currently 1)
    16      8     metadata length in bytes, uint64
    24      ...   metadata: canonical JSON (sorted keys, no spaces)
    ...           raw array payloads, concatenated in record order

Metadata carries the architecture, step counter, config hashes, the
trainer rng state, and one record per array (name, kind, shape, dtype,
offset into the payload region). Records are ordered (kind, name), so a
given state always serializes to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import CodecSpec
from .errors import DataError
from .model import ModelConfig, MusicModel

MAGIC = b"LSCORE-CKPT\x00"
VERSION = 1

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint"]


@dataclass
class Checkpoint:
    stage: int
    step: int
    arch: dict  # {"model": {...}, "codec": {...}}
    arch_hash: str
    config_hash: str
    rng_state: dict
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: dict[str, int] = field(default_factory=dict)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.arch["model"])

    def codec_spec(self) -> CodecSpec:
        return CodecSpec(**self.arch["codec"])

    def build_model(self) -> MusicModel:
        """Rebuild the architecture and load every parameter; any missing
        or misshaped record fails loudly."""
        model = MusicModel.build(self.model_config(), seed=0)
        load_into_model(self, model)
        return model


def load_into_model(ckpt: Checkpoint, model: MusicModel,
                    skip_missing_prefixes: tuple[str, ...] = ()) -> None:
    """Copy checkpoint parameters into `model` by name.

    `skip_missing_prefixes` lets stage-2 setup leave its fresh projection
    untouched; everything else must match one-for-one.
    """
    live = model.parameters()
    expected = {
        name for name in live
        if not any(name.startswith(p) for p in skip_missing_prefixes)
    }
    stored = set(ckpt.params)
    if stored != expected:
        missing = sorted(expected - stored)[:6]
        extra = sorted(stored - expected)[:6]
        raise DataError(
            f"checkpoint/model parameter sets differ: missing {missing}, unexpected {extra}"
        )
    for name in sorted(stored):
        arr = ckpt.params[name]
        target = live[name]
        if arr.shape != target.data.shape:
            raise DataError(
                f"checkpoint parameter {name} has shape {arr.shape}, "
                f"model expects {target.data.shape}"
            )
        target.data = arr.astype(target.data.dtype).copy()


def _canonical_meta(ckpt: Checkpoint, records: list[dict]) -> bytes:
    meta = {
        "format": VERSION,
        "stage": ckpt.stage,
        "step": ckpt.step,
        "arch": ckpt.arch,
        "arch_hash": ckpt.arch_hash,
        "config_hash": ckpt.config_hash,
        "rng_state": ckpt.rng_state,
        "adam_t": {k: int(v) for k, v in sorted(ckpt.adam_t.items())},
        "records": records,
    }
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    groups = (("param", ckpt.params), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v))
    records = []
    payloads = []
    offset = 0
    for kind, arrays in groups:
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            records.append(
                {
                    "name": name,
                    "kind": kind,
                    "shape": list(arr.shape),
                    "dtype": "<f8",
                    "offset": offset,
                    "nbytes": arr.nbytes,
                }
            )
            payloads.append(arr.tobytes(order="C"))
            offset += arr.nbytes
    meta = _canonical_meta(ckpt, records)
    header = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(meta))
    Path(path).write_bytes(header + meta + b"".join(payloads))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 24 or raw[:12] != MAGIC:
        raise DataError(f"{path}: not a checkpoint container")
    version = struct.unpack_from("<I", raw, 12)[0]
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    meta_len = struct.unpack_from("<Q", raw, 16)[0]
    meta_end = 24 + meta_len
    if len(raw) < meta_end:
        raise DataError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[24:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt metadata: {exc}") from exc
    buckets = {"param": {}, "adam_m": {}, "adam_v": {}}
    for rec in meta["records"]:
        start = meta_end + rec["offset"]
        end = start + rec["nbytes"]
        if end > len(raw):
            raise DataError(f"{path}: record {rec['name']} overruns the file")
        arr = np.frombuffer(raw, dtype=rec["dtype"], count=rec["nbytes"] // 8, offset=start)
        buckets[rec["kind"]][rec["name"]] = arr.reshape(rec["shape"]).astype(np.float64)
    return Checkpoint(
        stage=meta["stage"],
        step=meta["step"],
        arch=meta["arch"],
        arch_hash=meta["arch_hash"],
        config_hash=meta["config_hash"],
        rng_state=meta["rng_state"],
        params=buckets["param"],
        adam_m=buckets["adam_m"],
        adam_v=buckets["adam_v"],
        adam_t={k: int(v) for k, v in meta.get("adam_t", {}).items()},
    )
