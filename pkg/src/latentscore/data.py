"""Synthetic paired tasks and manifest I/O.

Each synthetic example's target latents are a deterministic function of
its conditioning: a seeded per-token signature summed over the text ids,
plus (for video tasks) a seeded linear readout of the video features.
That makes conditioning -> target learnable, and lets tests check that
removing either modality measurably hurts reconstruction.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import LatentSequence
from .container import read_array, write_array
from .errors import ConfigError, DataError
from .tensor import derive_seed

__all__ = [
    "TextTokens",
    "VideoFeatures",
    "Example",
    "ManifestRecord",
    "Manifest",
    "TaskDims",
    "synth_task",
    "save_manifest",
    "load_manifest",
    "tokenize_prompt",
    "text_target",
    "video_target",
    "FALLBACK_PROMPT",
]

# Static instruction used when generation gets video input but no prompt.
FALLBACK_PROMPT = "Generate aligned music for the video"

TEXT_TARGET_STD = 0.5
VIDEO_TARGET_STD = 0.3


@dataclass
class TextTokens:
    ids: np.ndarray
    vocab_size: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if self.ids.size < 1:
            raise DataError("text token sequence is empty")
        if self.ids.min() < 0 or self.ids.max() >= self.vocab_size:
            raise DataError(
                f"text ids outside [0, {self.vocab_size}): span "
                f"[{self.ids.min()}, {self.ids.max()}]"
            )


@dataclass
class VideoFeatures:
    features: np.ndarray  # [t, d_v]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError(f"video features must be [t>=1, d_v], got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DataError("video features contain non-finite values")


@dataclass
class Example:
    id: str
    text: TextTokens
    latents: LatentSequence
    video: VideoFeatures | None = None


@dataclass
class ManifestRecord:
    id: str
    text_ids: list[int]
    latent_path: str
    video_path: str | None = None


@dataclass
class Manifest:
    records: list[ManifestRecord]
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.records)

    def load_example(self, record: ManifestRecord, vocab_size: int) -> Example:
        latents = LatentSequence(read_array(self.root / record.latent_path))
        video = None
        if record.video_path is not None:
            video = VideoFeatures(read_array(self.root / record.video_path))
        return Example(
            id=record.id,
            text=TextTokens(np.array(record.text_ids), vocab_size),
            latents=latents,
            video=video,
        )

    def load_all(self, vocab_size: int) -> list[Example]:
        return [self.load_example(r, vocab_size) for r in self.records]


@dataclass(frozen=True)
class TaskDims:
    """Shape of a synthetic task; defaults are desk scale."""

    text_len: int = 4
    vocab: int = 64
    frames: int = 8
    channels: int = 8
    video_len: int = 4
    video_dim: int = 12

    def __post_init__(self):
        for name in ("text_len", "vocab", "frames", "channels", "video_len", "video_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"task dim {name} must be >= 1, got {getattr(self, name)}")


def _gen(*seed_parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(*seed_parts)))


def text_target(seed: int, ids: np.ndarray, dims: TaskDims) -> np.ndarray:
    """Sum of per-token seeded signatures, scaled so the result has
    roughly unit-fraction spread regardless of text length."""
    ids = np.asarray(ids, dtype=np.int64)
    total = np.zeros((dims.frames, dims.channels))
    for tid in ids:
        total += _gen(seed, "signature", int(tid)).standard_normal(
            (dims.frames, dims.channels)
        )
    return total * (TEXT_TARGET_STD / math.sqrt(ids.size))


def video_target(seed: int, features: np.ndarray, dims: TaskDims) -> np.ndarray:
    """Fixed seeded linear readout of time-pooled video features."""
    readout = _gen(seed, "readout").standard_normal(
        (dims.video_dim, dims.frames * dims.channels)
    )
    scale = VIDEO_TARGET_STD * math.sqrt(features.shape[0] / dims.video_dim)
    pooled = np.asarray(features, dtype=np.float64).mean(axis=0)
    return (pooled @ readout).reshape(dims.frames, dims.channels) * scale


def synth_task(
    seed: int,
    count: int,
    mode: str,
    dims: TaskDims,
    out_dir,
) -> Manifest:
    """Generate `count` examples under `out_dir` and return the manifest.

    `mode` is "text_only" (no video files) or "text_video". In the video
    mode, adjacent examples share one text prompt and differ only in
    their video features, so the video signal is necessary rather than
    merely redundant: a model that ignores video faces an irreducible
    error floor on this task. Latents and video features land in
    `latents/` and `video/` subdirectories; the manifest itself is not
    written (see `save_manifest`).
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if mode not in ("text_only", "text_video"):
        raise ConfigError(f"unknown mode {mode!r}; use text_only or text_video")
    out_dir = Path(out_dir)
    (out_dir / "latents").mkdir(parents=True, exist_ok=True)
    if mode == "text_video":
        (out_dir / "video").mkdir(parents=True, exist_ok=True)

    records = []
    for idx in range(count):
        ex_id = f"ex{idx:04d}"
        text_idx = idx // 2 if mode == "text_video" else idx
        ids = _gen(seed, "text", text_idx).integers(0, dims.vocab, dims.text_len)
        target = text_target(seed, ids, dims)
        video_path = None
        if mode == "text_video":
            feats = _gen(seed, "video", idx).standard_normal(
                (dims.video_len, dims.video_dim)
            )
            target = target + video_target(seed, feats, dims)
            video_path = f"video/{ex_id}.lsc"
            write_array(out_dir / video_path, feats)
        latent_path = f"latents/{ex_id}.lsc"
        write_array(out_dir / latent_path, target)
        records.append(
            ManifestRecord(
                id=ex_id,
                text_ids=[int(t) for t in ids],
                latent_path=latent_path,
                video_path=video_path,
            )
        )
    return Manifest(records=records, root=out_dir)


# ---------------------------------------------------------------------------
# manifest files: one JSON record per line


_REQUIRED_KEYS = {"id", "text_ids", "latent_path"}
_ALLOWED_KEYS = _REQUIRED_KEYS | {"video_path"}


def save_manifest(manifest: Manifest, path) -> None:
    lines = []
    for rec in manifest.records:
        doc = {"id": rec.id, "text_ids": rec.text_ids, "latent_path": rec.latent_path}
        if rec.video_path is not None:
            doc["video_path"] = rec.video_path
        lines.append(json.dumps(doc, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
        if not isinstance(doc, dict):
            raise DataError(f"{path}:{lineno}: record is not an object")
        missing = _REQUIRED_KEYS - doc.keys()
        if missing:
            raise DataError(f"{path}:{lineno}: missing fields {sorted(missing)}")
        unknown = doc.keys() - _ALLOWED_KEYS
        if unknown:
            raise DataError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
        rec_id = doc["id"]
        if rec_id in seen:
            raise DataError(
                f"{path}:{lineno}: duplicate id {rec_id!r} "
                f"(first seen on line {seen[rec_id]}, again on line {lineno})"
            )
        seen[rec_id] = lineno
        rec = ManifestRecord(
            id=rec_id,
            text_ids=[int(t) for t in doc["text_ids"]],
            latent_path=doc["latent_path"],
            video_path=doc.get("video_path"),
        )
        for ref in (rec.latent_path, rec.video_path):
            if ref is not None and not (root / ref).exists():
                raise DataError(f"{path}:{lineno}: referenced file missing: {root / ref}")
        records.append(rec)
    return Manifest(records=records, root=root)


def tokenize_prompt(prompt: str, vocab_size: int) -> np.ndarray:
    """Deterministic hash tokenizer: one id per whitespace-separated word."""
    words = prompt.split()
    if not words:
        raise DataError("prompt has no words to tokenize")
    ids = []
    for word in words:
        digest = hashlib.sha256(word.lower().encode("utf-8")).digest()
        ids.append(int.from_bytes(digest[:8], "little") % vocab_size)
    return np.array(ids, dtype=np.int64)
