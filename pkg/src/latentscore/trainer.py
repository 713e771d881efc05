"""Two-stage optimization harness.

Stage 1 pretrains the text-conditioned pipeline (no video projection in
the parameter set at all); stage 2 rebuilds the model with a fresh
projection layer, loads everything else from the stage-1 checkpoint, and
fine-tunes the lot. AdamW with decoupled weight decay, linear-warmup +
cosine-decay learning rate, global-norm gradient clipping, and bit-exact
resume (the trainer rng state rides in the checkpoint).
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_into_model
from .codec import CodecSpec
from .data import Example, Manifest
from .errors import ConfigError, DataError
from .generator import teacher_forced_loss
from .model import ModelConfig, MusicModel, arch_fingerprint
from .refiner import FlowConfig
from .tensor import Rng, Tensor, derive_seed

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdamW",
    "lr_at",
    "clip_global_norm",
    "train_stage1",
    "train_stage2",
]


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    steps: int = 500
    batch_size: int = 4
    peak_lr: float = 3e-3
    warmup_frac: float = 0.10
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int = 50
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must lie in [0, 1), got {self.warmup_frac}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> peak over the warmup span, then cosine decay
    peak -> 0 at `steps`. Continuous at the junction."""
    if not 0 <= step <= cfg.steps:
        raise ConfigError(f"step {step} outside [0, {cfg.steps}]")
    warmup = cfg.warmup_frac * cfg.steps
    if warmup > 0 and step < warmup:
        return cfg.peak_lr * step / warmup
    span = cfg.steps - warmup
    if span <= 0:
        return 0.0
    progress = (step - warmup) / span
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled weight decay (applied before the adaptive update),
    betas (0.9, 0.999), eps 1e-8, bias-corrected moments."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: dict[str, Tensor], weight_decay: float):
        self.params = dict(sorted(params.items()))
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.t = {name: 0 for name in self.params}

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if np.any(np.isnan(g)):
                raise RuntimeError(f"NaN gradient for parameter {name}")
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            self.t[name] += 1
            t = self.t[name]
            self.m[name] = self.BETA1 * self.m[name] + (1 - self.BETA1) * g
            self.v[name] = self.BETA2 * self.v[name] + (1 - self.BETA2) * g * g
            m_hat = self.m[name] / (1 - self.BETA1**t)
            v_hat = self.v[name] / (1 - self.BETA2**t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.EPS)

    def export_state(self):
        return dict(self.m), dict(self.v), dict(self.t)

    def load_state(self, m, v, t) -> None:
        for name in self.params:
            if name in m:
                self.m[name] = np.array(m[name])
            if name in v:
                self.v[name] = np.array(v[name])
            if name in t:
                self.t[name] = int(t[name])


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `max_norm`;
    returns the pre-clip norm. Summation order is fixed (sorted names)."""
    total = 0.0
    for name in sorted(params):
        g = params[name].grad
        if g is not None:
            total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for name in sorted(params):
            g = params[name].grad
            if g is not None:
                g *= scale
    return norm


# ---------------------------------------------------------------------------
# training loops


def _check_examples(examples: list[Example], stage: int) -> None:
    for ex in examples:
        if stage == 1 and ex.video is not None:
            raise DataError(f"stage-1 manifest contains a video example: {ex.id}")
        if stage == 2 and ex.video is None:
            raise DataError(f"stage-2 manifest is missing video features: {ex.id}")


def _snapshot(model: MusicModel, codec: CodecSpec, opt: AdamW, step: int,
              rng: Rng, stage: int, config_hash: str) -> Checkpoint:
    m, v, t = opt.export_state()
    return Checkpoint(
        stage=stage,
        step=step,
        arch={"model": asdict(model.cfg), "codec": asdict(codec)},
        arch_hash=arch_fingerprint(model.cfg, codec),
        config_hash=config_hash,
        rng_state=rng.state(),
        params={name: p.data.copy() for name, p in model.parameters().items()},
        adam_m={k: a.copy() for k, a in m.items()},
        adam_v={k: a.copy() for k, a in v.items()},
        adam_t=t,
    )


def _run_loop(
    model: MusicModel,
    examples: list[Example],
    codec: CodecSpec,
    flow: FlowConfig,
    tcfg: TrainConfig,
    stage: int,
    config_hash: str,
    opt: AdamW,
    rng: Rng,
    start_step: int,
    log_path=None,
    stop_at_step: int | None = None,
) -> Checkpoint:
    params = model.parameters()
    end_step = tcfg.steps if stop_at_step is None else min(stop_at_step, tcfg.steps)
    log_fh = open(log_path, "a") if log_path is not None else None
    try:
        for step in range(start_step, end_step):
            started = time.perf_counter()
            lr = lr_at(step, tcfg)
            batch = rng.integers(0, len(examples), size=tcfg.batch_size)
            model.zero_grad()
            total = None
            for i in batch:
                term = teacher_forced_loss(model, examples[int(i)], rng, flow)
                total = term if total is None else total + term
            loss = total / tcfg.batch_size
            loss.backward()
            clip_global_norm(params, tcfg.clip_norm)
            opt.step(lr)
            wall_ms = (time.perf_counter() - started) * 1e3
            if log_fh is not None:
                log_fh.write(
                    json.dumps(
                        {"step": step, "loss": loss.item(), "lr": lr, "wall_ms": wall_ms},
                        sort_keys=True,
                    )
                    + "\n"
                )
            if tcfg.eval_every and step % tcfg.eval_every == 0:
                logger.info("step %d loss %.5f lr %.2e", step, loss.item(), lr)
    finally:
        if log_fh is not None:
            log_fh.close()
    return _snapshot(model, codec, opt, end_step, rng, stage, config_hash)


def train_stage1(
    manifest: Manifest,
    model_cfg: ModelConfig,
    codec: CodecSpec,
    flow: FlowConfig,
    tcfg: TrainConfig,
    config_hash: str = "",
    resume: Checkpoint | None = None,
    log_path=None,
    stop_at_step: int | None = None,
) -> Checkpoint:
    """Text-conditioned pretraining: no video pathway exists at all.

    `stop_at_step` halts an otherwise fully configured run early (an
    interruption); resuming from the resulting checkpoint under the same
    config reproduces the uninterrupted run bit-exactly.
    """
    if model_cfg.with_video:
        raise ConfigError("stage 1 trains without the video projection; "
                          "got a config with with_video=True")
    examples = manifest.load_all(model_cfg.vocab)
    if not examples:
        raise DataError("stage-1 manifest is empty")
    _check_examples(examples, stage=1)
    model = MusicModel.build(model_cfg, seed=tcfg.seed)
    opt = AdamW(model.parameters(), tcfg.weight_decay)
    rng = Rng(derive_seed(tcfg.seed, "train", 1))
    start_step = 0
    if resume is not None:
        expected = arch_fingerprint(model_cfg, codec)
        if resume.arch_hash != expected:
            raise DataError(
                f"resume checkpoint architecture {resume.arch_hash} does not match "
                f"current configuration {expected}"
            )
        load_into_model(resume, model)
        opt.load_state(resume.adam_m, resume.adam_v, resume.adam_t)
        rng.set_state(resume.rng_state)
        start_step = resume.step
    return _run_loop(model, examples, codec, flow, tcfg, 1, config_hash, opt, rng,
                     start_step, log_path, stop_at_step)


def train_stage2(
    manifest: Manifest,
    model_cfg: ModelConfig,
    codec: CodecSpec,
    flow: FlowConfig,
    tcfg: TrainConfig,
    init: Checkpoint,
    config_hash: str = "",
    log_path=None,
    zero_video: bool = False,
) -> Checkpoint:
    """Video fine-tuning from a stage-1 checkpoint.

    The projection layer is fresh; every other parameter loads from
    `init`. `zero_video` trains the ablation control that sees zeroed
    video features under an otherwise identical budget.
    """
    if init.stage != 1:
        raise DataError(f"stage-2 init must be a stage-1 checkpoint, got stage {init.stage}")
    model_cfg = model_cfg.with_video_enabled()
    init_model_cfg = init.model_config().with_video_enabled()
    if init_model_cfg != model_cfg or init.codec_spec() != codec:
        raise DataError(
            f"stage-1 checkpoint architecture {init.arch_hash} is incompatible with "
            f"the stage-2 configuration {arch_fingerprint(model_cfg, codec)}"
        )
    examples = manifest.load_all(model_cfg.vocab)
    if not examples:
        raise DataError("stage-2 manifest is empty")
    _check_examples(examples, stage=2)
    if zero_video:
        for ex in examples:
            ex.video.features = np.zeros_like(ex.video.features)
    model = MusicModel.build(model_cfg, seed=tcfg.seed)
    load_into_model(init, model, skip_missing_prefixes=("planner.projection.",))
    opt = AdamW(model.parameters(), tcfg.weight_decay)
    rng = Rng(derive_seed(tcfg.seed, "train", 2))
    return _run_loop(model, examples, codec, flow, tcfg, 2, config_hash, opt, rng, 0,
                     log_path)
