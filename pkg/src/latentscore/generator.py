"""Autoregressive generation loop and the teacher-forced training loss.

Generation realizes the patchwise factorization: plan from everything
generated so far, denoise one patch, append it to the history, repeat;
finally concatenate and decode. Training replaces generated history with
ground-truth patches (teacher forcing) and averages the per-patch
flow-matching losses; planning runs once per example because the
prefix-causal mask makes each step's context a prefix of the full pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .codec import CodecSpec, PatchSequence, Waveform, decode, patchify, unpatchify
from .data import Example, TextTokens, VideoFeatures
from .errors import ConfigError, GenerationError
from .model import MusicModel
from .refiner import FlowConfig, euler_sample, flow_loss
from .tensor import Rng, Tensor, no_grad

__all__ = [
    "GenerationRequest",
    "GenerationResult",
    "generate",
    "teacher_forced_loss",
    "teacher_forced_patch_losses",
]


@dataclass
class GenerationRequest:
    text: TextTokens
    n_patches: int
    flow: FlowConfig
    seed: int
    video: VideoFeatures | None = None

    def __post_init__(self):
        if self.n_patches < 1:
            raise ConfigError(f"n_patches must be >= 1, got {self.n_patches}")


@dataclass
class GenerationResult:
    patches: PatchSequence
    waveform: Waveform
    per_patch_seconds: list[float] = field(default_factory=list)


def generate(req: GenerationRequest, model: MusicModel, spec: CodecSpec) -> GenerationResult:
    """Sample `n_patches` latent patches autoregressively and decode.

    Deterministic per (request, model): one derived rng stream drives the
    per-patch noise draws. A non-finite patch aborts with the 1-based
    patch index. The waveform always spans n_patches*patch_len*frame_size
    samples.
    """
    if model.cfg.channels != spec.channels:
        raise ConfigError(
            f"model channels {model.cfg.channels} do not match codec channels {spec.channels}"
        )
    rng = Rng(req.seed)
    video_feats = req.video.features if req.video is not None else None
    p, k = model.cfg.patch_len, model.cfg.channels
    history: list[np.ndarray] = []
    timings: list[float] = []
    for i in range(1, req.n_patches + 1):
        started = time.perf_counter()
        with no_grad():
            planning = model.plan_sequence(
                req.text.ids, video_feats, np.array(history).reshape(len(history), p, k)
            )
            prev = history[-1] if history else model.bos_patch.data
            patch = euler_sample(
                model.denoiser, planning.seq, prev, req.flow, rng, model.null_condition
            )
        if not np.all(np.isfinite(patch)):
            raise GenerationError(f"non-finite values in generated patch {i}", patch_index=i)
        history.append(patch)
        timings.append(time.perf_counter() - started)
    patches = PatchSequence(np.stack(history))
    waveform = decode(unpatchify(patches), spec)
    return GenerationResult(patches=patches, waveform=waveform, per_patch_seconds=timings)


def teacher_forced_patch_losses(
    model: MusicModel,
    example: Example,
    rng: Rng,
    flow: FlowConfig,
    history_patches: np.ndarray | None = None,
) -> list[Tensor]:
    """Per-patch flow losses with ground-truth history conditioning.

    `history_patches` overrides the conditioning copies of the patches
    (the regression targets stay the example's own latents), which is how
    causality probes perturb one step without moving its target.
    """
    split = patchify(example.latents, model.cfg.patch_len)
    targets = split.patches
    history = targets if history_patches is None else np.asarray(history_patches)
    if history.shape != targets.shape:
        raise ConfigError(
            f"history override shape {history.shape} != patch shape {targets.shape}"
        )
    n = split.count
    video_feats = example.video.features if example.video is not None else None
    planning = model.plan_sequence(example.text.ids, video_feats, history[: n - 1])
    losses: list[Tensor] = []
    for i in range(1, n + 1):
        ctx = planning.prefix_for_step(i)
        prev = Tensor(history[i - 2]) if i >= 2 else model.bos_patch
        losses.append(
            flow_loss(
                model.denoiser, targets[i - 1], ctx, prev, rng, flow, model.null_condition
            )
        )
    return losses


def teacher_forced_loss(
    model: MusicModel,
    example: Example,
    rng: Rng,
    flow: FlowConfig,
    history_patches: np.ndarray | None = None,
) -> Tensor:
    """Mean of the per-patch losses (the training objective)."""
    losses = teacher_forced_patch_losses(model, example, rng, flow, history_patches)
    total = losses[0]
    for term in losses[1:]:
        total = total + term
    return total / len(losses)
