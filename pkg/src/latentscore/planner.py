"""The autoregressive planner.

Per generation step it fuses projected video features, embedded text and
encoded audio history into one sequence, runs a prefix-causal semantic
encoder over it, squeezes the result through a scalar-quantized
bottleneck, and adds back a learned residual. The output sequence is the
planning embedding that conditions the patch denoiser.

Causality contract: with the prefix-causal mask, position outputs depend
only on the conditioning prefix and earlier history positions, so the
planning sequence for step i equals the first l+t+i-1 positions of a
longer teacher-forced pass. The trainer relies on that to plan once per
example instead of once per patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import EncoderBlock, LayerNorm, Linear, Module, causal_mask, prefix_causal_mask
from .tensor import (
    Rng,
    ShapeError,
    Tensor,
    concat,
    embedding,
    reshape,
    sinusoidal_encoding,
    ste_round_clip,
)

__all__ = [
    "FusedLayout",
    "PlanningEmbedding",
    "ProjectionLayer",
    "AudioLatentEncoder",
    "SemanticEncoder",
    "FsqLayer",
    "ResidualEncoder",
    "Planner",
]

# segment-type rows: video / text / history
_SEG_VIDEO, _SEG_TEXT, _SEG_HISTORY = 0, 1, 2


@dataclass(frozen=True)
class FusedLayout:
    """Segment boundaries of a fused conditioning sequence."""

    video_len: int
    text_len: int
    history_len: int

    @property
    def prefix_len(self) -> int:
        return self.video_len + self.text_len

    @property
    def total_len(self) -> int:
        return self.prefix_len + self.history_len


@dataclass
class PlanningEmbedding:
    """Planner output: one row per fused position, plus its layout."""

    seq: Tensor  # [total_len, d]
    layout: FusedLayout

    def prefix_for_step(self, step: int) -> Tensor:
        """Rows visible when generating patch `step` (1-based): the whole
        conditioning prefix plus history positions for patches < step."""
        if not 1 <= step <= self.layout.history_len + 1:
            raise ValueError(
                f"step {step} outside 1..{self.layout.history_len + 1}"
            )
        return self.seq[: self.layout.prefix_len + step - 1, :]


class ProjectionLayer(Module):
    """Maps framewise visual features into the model embedding space.

    Only present once video conditioning is enabled (training stage 2);
    trained from scratch there.
    """

    def __init__(self, rng: Rng, video_dim: int, dim: int):
        self.linear = Linear(rng, video_dim, dim)
        self.video_dim = video_dim

    def __call__(self, features: np.ndarray) -> Tensor:
        feats = np.asarray(features)
        if feats.ndim != 2 or feats.shape[1] != self.video_dim:
            raise ShapeError(
                f"video features {feats.shape} do not match projection input dim "
                f"{self.video_dim}"
            )
        return self.linear(Tensor(feats))


class AudioLatentEncoder(Module):
    """One embedding per historical latent patch.

    Each patch is flattened and linearly projected, then a causal
    transformer (no internal positional code) mixes in earlier patches.
    Identical patches therefore embed identically; order information is
    added downstream with the fused positional encoding.
    """

    def __init__(self, rng: Rng, patch_len: int, channels: int, dim: int, layers: int, heads: int):
        self.patch_len = patch_len
        self.channels = channels
        self.in_proj = Linear(rng, patch_len * channels, dim)
        self.blocks = [EncoderBlock(rng, dim, heads) for _ in range(layers)]
        self.dim = dim

    def __call__(self, patches) -> Tensor:
        """`patches`: [n, p, k] array/Tensor of past patches; n may be 0."""
        arr = patches.data if isinstance(patches, Tensor) else np.asarray(patches)
        if arr.size == 0:
            return Tensor(np.zeros((0, self.dim)))
        if arr.ndim != 3 or arr.shape[1:] != (self.patch_len, self.channels):
            raise ShapeError(
                f"history patches {arr.shape} do not match "
                f"[n, {self.patch_len}, {self.channels}]"
            )
        n = arr.shape[0]
        x = self.in_proj(reshape(Tensor(arr), (n, self.patch_len * self.channels)))
        mask = causal_mask(n)
        for block in self.blocks:
            x = block(x, mask)
        return x


class SemanticEncoder(Module):
    """Multimodal transformer producing the semantic plan sequence."""

    def __init__(self, rng: Rng, vocab: int, dim: int, layers: int, heads: int):
        self.embed = Tensor(rng.normal((vocab, dim)) * 0.02, requires_grad=True)
        self.blocks = [EncoderBlock(rng, dim, heads) for _ in range(layers)]
        # final norm keeps activations in range for the quantizer
        self.ln_f = LayerNorm(dim)

    def embed_tokens(self, ids: np.ndarray) -> Tensor:
        return embedding(self.embed, np.asarray(ids, dtype=np.int64))

    def __call__(self, fused: Tensor, mask: np.ndarray) -> Tensor:
        x = fused
        for block in self.blocks:
            x = block(x, mask)
        return self.ln_f(x)


class FsqLayer(Module):
    """Scalar-quantized bottleneck.

    Projects down to `bottleneck_dim`, snaps every coordinate onto the
    uniform grid step*{-levels..levels} (straight-through gradient), and
    projects back up. Clearing `quantize_enabled` bypasses the snap: that
    is both the continuous-latent ablation and the exact function the
    straight-through gradient differentiates.
    """

    def __init__(self, rng: Rng, dim: int, bottleneck_dim: int, step: float = 0.25,
                 levels: int = 4):
        if step <= 0:
            raise ConfigError(f"fsq step must be positive, got {step}")
        if levels < 1:
            raise ConfigError(f"fsq level bound must be >= 1, got {levels}")
        self.down = Linear(rng, dim, bottleneck_dim)
        self.up = Linear(rng, bottleneck_dim, dim)
        self.step = step
        self.levels = levels
        self.quantize_enabled = True

    def bottleneck(self, x: Tensor) -> Tensor:
        return self.down(x)

    def quantize(self, z: Tensor) -> Tensor:
        return ste_round_clip(z, self.step, self.levels)

    def __call__(self, x: Tensor, quantize: bool | None = None) -> Tensor:
        z = self.down(x)
        if self.quantize_enabled if quantize is None else quantize:
            z = self.quantize(z)
        return self.up(z)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(-self.levels, self.levels + 1) * self.step


class ResidualEncoder(Module):
    """Recovers detail the bottleneck discarded.

    A transformer over the quantized sequence followed by a zero-
    initialized output projection, so the residual branch starts (and can
    be forced) exactly null, leaving the planning embedding equal to the
    quantized one.
    """

    def __init__(self, rng: Rng, dim: int, layers: int, heads: int):
        self.blocks = [EncoderBlock(rng, dim, heads) for _ in range(layers)]
        self.out_proj = Linear(rng, dim, dim, zero_init=True)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return self.out_proj(x)


class Planner(Module):
    """ProjectionLayer? -> fuse -> SemanticEncoder -> FSQ -> residual."""

    def __init__(
        self,
        rng: Rng,
        vocab: int,
        dim: int,
        bottleneck_dim: int,
        heads: int,
        semantic_layers: int,
        residual_layers: int,
        history_layers: int,
        patch_len: int,
        channels: int,
        video_dim: int | None = None,
        fsq_step: float = 0.25,
        fsq_levels: int = 4,
    ):
        self.semantic = SemanticEncoder(rng, vocab, dim, semantic_layers, heads)
        self.fsq = FsqLayer(rng, dim, bottleneck_dim, fsq_step, fsq_levels)
        self.residual = ResidualEncoder(rng, dim, residual_layers, heads)
        self.history = AudioLatentEncoder(rng, patch_len, channels, dim, history_layers, heads)
        self.segments = Tensor(rng.normal((3, dim)) * 0.02, requires_grad=True)
        self.projection = ProjectionLayer(rng, video_dim, dim) if video_dim else None
        self.dim = dim
        self.vocab = vocab

    # -- pieces --------------------------------------------------------

    def project_video(self, features: np.ndarray) -> Tensor:
        if self.projection is None:
            raise ConfigError(
                "video features supplied but the model has no projection layer "
                "(text-only stage)"
            )
        return self.projection(features)

    def encode_history(self, patches) -> Tensor:
        return self.history(patches)

    def fuse(self, f_v: Tensor | None, f_t: Tensor, f_a: Tensor) -> tuple[Tensor, FusedLayout]:
        """Concatenate video, text, history; add segment-type rows and an
        absolute sinusoidal position code."""
        parts = []
        seg_ids = []
        v_len = 0
        if f_v is not None and f_v.shape[0] > 0:
            parts.append(f_v)
            v_len = f_v.shape[0]
            seg_ids.extend([_SEG_VIDEO] * v_len)
        parts.append(f_t)
        seg_ids.extend([_SEG_TEXT] * f_t.shape[0])
        h_len = f_a.shape[0]
        if h_len > 0:
            parts.append(f_a)
            seg_ids.extend([_SEG_HISTORY] * h_len)
        fused = concat(parts, axis=0) if len(parts) > 1 else parts[0]
        layout = FusedLayout(video_len=v_len, text_len=f_t.shape[0], history_len=h_len)
        fused = fused + embedding(self.segments, np.array(seg_ids, dtype=np.int64))
        fused = fused + Tensor(sinusoidal_encoding(np.arange(layout.total_len), self.dim))
        return fused, layout

    def mask_for(self, layout: FusedLayout) -> np.ndarray:
        return prefix_causal_mask(layout.prefix_len, layout.total_len)

    def plan(self, semantic_seq: Tensor, mask: np.ndarray) -> Tensor:
        """Planning embedding from the semantic sequence: quantized
        bottleneck output plus its learned residual (same shape)."""
        quantized = self.fsq(semantic_seq)
        return quantized + self.residual(quantized, mask)

    # -- full pipeline ---------------------------------------------------

    def plan_sequence(
        self,
        text_ids: np.ndarray,
        video_features: np.ndarray | None,
        history_patches,
    ) -> PlanningEmbedding:
        f_v = self.project_video(video_features) if video_features is not None else None
        f_t = self.semantic.embed_tokens(text_ids)
        f_a = self.encode_history(history_patches)
        fused, layout = self.fuse(f_v, f_t, f_a)
        mask = self.mask_for(layout)
        semantic_seq = self.semantic(fused, mask)
        return PlanningEmbedding(seq=self.plan(semantic_seq, mask), layout=layout)
