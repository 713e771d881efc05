"""Model aggregate: planner + patch denoiser + the learned boundary
parameters (null condition for guidance, begin-of-sequence patch)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .codec import CodecSpec
from .errors import ConfigError
from .nn import Module
from .planner import Planner, PlanningEmbedding
from .refiner import NullCondition, PatchDenoiser
from .tensor import Rng, Tensor, derive_seed

__all__ = ["ModelConfig", "MusicModel", "arch_fingerprint"]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs. Desk-scale defaults; see config presets for the
    full-scale variant."""

    dim: int = 32
    bottleneck_dim: int = 16
    heads: int = 4
    semantic_layers: int = 2
    residual_layers: int = 1
    history_layers: int = 1
    denoiser_layers: int = 4
    vocab: int = 64
    patch_len: int = 4
    channels: int = 8
    video_dim: int = 12
    with_video: bool = False
    fsq_step: float = 0.25
    fsq_levels: int = 4
    null_len: int = 4

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        for name in (
            "dim", "bottleneck_dim", "heads", "semantic_layers", "residual_layers",
            "history_layers", "denoiser_layers", "vocab", "patch_len", "channels",
            "null_len",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.with_video and self.video_dim < 1:
            raise ConfigError(f"video_dim must be >= 1, got {self.video_dim}")

    def with_video_enabled(self) -> "ModelConfig":
        return replace(self, with_video=True)


def arch_fingerprint(model_cfg: ModelConfig, codec_spec: CodecSpec) -> str:
    """Stable hash of everything that determines parameter shapes and the
    latent space; mismatched fingerprints make checkpoints unusable."""
    doc = {"model": asdict(model_cfg), "codec": asdict(codec_spec)}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class MusicModel(Module):
    def __init__(self, cfg: ModelConfig, planner: Planner, denoiser: PatchDenoiser,
                 null_condition: NullCondition, bos_patch: Tensor):
        self.cfg = cfg
        self.planner = planner
        self.denoiser = denoiser
        self.null_condition = null_condition
        self.bos_patch = bos_patch

    @classmethod
    def build(cls, cfg: ModelConfig, seed: int) -> "MusicModel":
        """Deterministic initialization: one derived stream, fixed draw
        order, so (cfg, seed) pins every parameter."""
        rng = Rng(derive_seed(seed, "model-init"))
        planner = Planner(
            rng,
            vocab=cfg.vocab,
            dim=cfg.dim,
            bottleneck_dim=cfg.bottleneck_dim,
            heads=cfg.heads,
            semantic_layers=cfg.semantic_layers,
            residual_layers=cfg.residual_layers,
            history_layers=cfg.history_layers,
            patch_len=cfg.patch_len,
            channels=cfg.channels,
            video_dim=cfg.video_dim if cfg.with_video else None,
            fsq_step=cfg.fsq_step,
            fsq_levels=cfg.fsq_levels,
        )
        denoiser = PatchDenoiser(
            rng,
            dim=cfg.dim,
            heads=cfg.heads,
            layers=cfg.denoiser_layers,
            patch_len=cfg.patch_len,
            channels=cfg.channels,
        )
        null_condition = NullCondition(rng, cfg.null_len, cfg.dim)
        # the "no previous patch" stand-in for the first step
        bos_patch = Tensor(np.zeros((cfg.patch_len, cfg.channels)), requires_grad=True)
        return cls(cfg, planner, denoiser, null_condition, bos_patch)

    def plan_sequence(self, text_ids, video_features, history_patches) -> PlanningEmbedding:
        return self.planner.plan_sequence(text_ids, video_features, history_patches)

    def named_parameters(self, prefix: str = ""):
        # cfg is not a parameter container; walk the real modules
        yield from self.planner.named_parameters(prefix + "planner.")
        yield from self.denoiser.named_parameters(prefix + "denoiser.")
        yield from self.null_condition.named_parameters(prefix + "null_condition.")
        yield prefix + "bos_patch", self.bos_patch
