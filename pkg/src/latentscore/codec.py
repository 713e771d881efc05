"""Invertible waveform <-> latent codec plus patch bookkeeping.

The codec is a fixed, seeded orthogonal linear map per frame: any seed
yields an energy-preserving, exactly invertible transform, which is what
the rest of the stack assumes of its (frozen) latent space. Sample rate
is carried as metadata only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .tensor import derive_seed

__all__ = [
    "CodecSpec",
    "Waveform",
    "LatentSequence",
    "PatchSequence",
    "encode",
    "decode",
    "patchify",
    "unpatchify",
]


@dataclass(frozen=True)
class CodecSpec:
    """Seeded per-frame transform: frame_size samples -> channels values.

    The mixing matrix is the Q factor of a seeded Gaussian matrix (sign-
    fixed so it is unique), hence orthogonal: channels must equal
    frame_size for the map to be invertible.
    """

    frame_size: int = 8
    channels: int = 8
    seed: int = 1234

    def __post_init__(self):
        if self.frame_size <= 0:
            raise ConfigError(f"frame_size must be positive, got {self.frame_size}")
        if self.channels != self.frame_size:
            raise ConfigError(
                f"channels ({self.channels}) must equal frame_size ({self.frame_size}) "
                "for an orthogonal per-frame codec"
            )

    def matrix(self) -> np.ndarray:
        """Regenerate the orthogonal mixing matrix from the seed (float64)."""
        gen = np.random.Generator(np.random.PCG64(derive_seed(self.seed, "codec-matrix")))
        raw = gen.standard_normal((self.frame_size, self.frame_size))
        q, r = np.linalg.qr(raw)
        q = q * np.sign(np.diag(r))
        return q


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 48000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise DataError("waveform is empty")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")


@dataclass
class LatentSequence:
    frames: np.ndarray  # [F, k]
    orig_samples: int | None = None  # pre-padding waveform length, for trim

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise DataError(f"latent frames must be 2-d, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("latent frames contain non-finite values")

    @property
    def channels(self) -> int:
        return self.frames.shape[1]


@dataclass
class PatchSequence:
    patches: np.ndarray  # [n, p, k]

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 3:
            raise DataError(f"patches must be 3-d, got shape {self.patches.shape}")

    @property
    def count(self) -> int:
        return self.patches.shape[0]

    @property
    def patch_len(self) -> int:
        return self.patches.shape[1]

    @property
    def channels(self) -> int:
        return self.patches.shape[2]


def _pad_to_multiple(arr: np.ndarray, multiple: int, axis: int = 0) -> np.ndarray:
    length = arr.shape[axis]
    remainder = length % multiple
    if remainder == 0:
        return arr
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (0, multiple - remainder)
    return np.pad(arr, pad)


def encode(w: Waveform, spec: CodecSpec) -> LatentSequence:
    """Map non-overlapping frames through the seeded orthogonal matrix.

    The waveform is right-padded with zeros to a whole number of frames;
    the original length is recorded so decode can trim it back off.
    """
    samples = _pad_to_multiple(w.samples, spec.frame_size)
    frames = samples.reshape(-1, spec.frame_size) @ spec.matrix()
    return LatentSequence(frames=frames, orig_samples=int(w.samples.size))


def decode(z: LatentSequence, spec: CodecSpec) -> Waveform:
    """Inverse of encode; trims padding when the original length is known."""
    if z.channels != spec.channels:
        raise DataError(
            f"latent channels {z.channels} do not match codec channels {spec.channels}"
        )
    samples = (z.frames @ spec.matrix().T).reshape(-1)
    if z.orig_samples is not None:
        samples = samples[: z.orig_samples]
    return Waveform(samples=samples)


def patchify(z: LatentSequence, patch_len: int) -> PatchSequence:
    """Split frames into consecutive windows of `patch_len`, zero-padding
    the tail so the window count is whole."""
    if patch_len <= 0:
        raise ConfigError(f"patch length must be positive, got {patch_len}")
    frames = _pad_to_multiple(z.frames, patch_len)
    n = frames.shape[0] // patch_len
    return PatchSequence(patches=frames.reshape(n, patch_len, z.channels))


def unpatchify(m: PatchSequence) -> LatentSequence:
    """Concatenate patches back into one frame sequence (exact inverse of
    patchify on padded input)."""
    n, p, k = m.patches.shape
    return LatentSequence(frames=m.patches.reshape(n * p, k))
