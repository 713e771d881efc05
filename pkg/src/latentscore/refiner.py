"""Patch refinement by conditional flow matching.

The denoiser is a bidirectional diffusion transformer over the token
sequence [planning context ++ previous patch frames ++ noisy patch
frames], modulated per block by the diffusion timestep. Training
regresses its output onto the velocity of the straight-line noising path
x_t = (1-t)*x0 + t*eps (so the target is eps - x0); sampling integrates
the learned field from t=1 (noise) down to t=0 with a fixed-step Euler
solver and classifier-free guidance.

Sign convention: velocities point from data toward noise, so each Euler
step subtracts h*v while t decreases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import FeedForward, Linear, Module, MultiHeadAttention
from .tensor import (
    Rng,
    ShapeError,
    Tensor,
    concat,
    embedding,
    layernorm,
    gelu,
    no_grad,
    sinusoidal_encoding,
    tmean,
)

__all__ = [
    "FlowConfig",
    "NullCondition",
    "PatchDenoiser",
    "alpha_schedule",
    "sigma_schedule",
    "sample_timestep",
    "velocity",
    "flow_loss",
    "euler_integrate",
    "euler_sample",
]

_SEG_CTX, _SEG_PREV, _SEG_NOISY = 0, 1, 2
_TIMESTEP_FREQ = 1000.0  # spreads t in [0,1] across the sinusoid bands


@dataclass(frozen=True)
class FlowConfig:
    """Sampler/regression settings. The noising path is fixed to the
    straight line alpha_t = 1-t, sigma_t = t; timesteps draw from a
    logit-normal (sigmoid of a standard normal), keeping t in (0,1)."""

    euler_steps: int = 20
    cfg_scale: float = 2.0
    cond_drop_prob: float = 0.1

    def __post_init__(self):
        if self.euler_steps < 1:
            raise ConfigError(f"euler_steps must be >= 1, got {self.euler_steps}")
        if not 0.0 <= self.cond_drop_prob < 1.0:
            raise ConfigError(
                f"cond_drop_prob must lie in [0, 1), got {self.cond_drop_prob}"
            )


def alpha_schedule(t: float) -> float:
    return 1.0 - t


def sigma_schedule(t: float) -> float:
    return t


def sample_timestep(rng: Rng) -> float:
    """Logit-normal draw: t = sigmoid(z), z ~ N(0,1); strictly inside (0,1)."""
    z = float(rng.normal(()))
    return 1.0 / (1.0 + math.exp(-z))


class NullCondition(Module):
    """Learned fixed-length context substituted when conditioning drops."""

    def __init__(self, rng: Rng, length: int, dim: int):
        self.rows = Tensor(rng.normal((length, dim)) * 0.02, requires_grad=True)

    def __call__(self) -> Tensor:
        return self.rows


class _DenoiserBlock(Module):
    """Transformer block with adaptive-norm timestep modulation.

    The modulation projection is zero-initialized, so scale/shift/gate all
    start at zero and the block opens as an identity.
    """

    def __init__(self, rng: Rng, dim: int, heads: int):
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.mlp = FeedForward(rng, dim)
        self.mod = Linear(rng, dim, 6 * dim, zero_init=True)
        self.dim = dim

    def __call__(self, x: Tensor, t_vec: Tensor) -> Tensor:
        d = self.dim
        m = self.mod(t_vec)  # [1, 6d]
        shift_a, scale_a, gate_a = m[:, :d], m[:, d : 2 * d], m[:, 2 * d : 3 * d]
        shift_m, scale_m, gate_m = (
            m[:, 3 * d : 4 * d],
            m[:, 4 * d : 5 * d],
            m[:, 5 * d :],
        )
        h = layernorm(x) * (scale_a + 1.0) + shift_a
        x = x + gate_a * self.attn(h)  # full bidirectional attention
        h = layernorm(x) * (scale_m + 1.0) + shift_m
        x = x + gate_m * self.mlp(h)
        return x


class PatchDenoiser(Module):
    """Velocity network over one latent patch.

    Frames enter through a per-frame projection [k -> d]; the output
    projection is zero-initialized so the predicted field starts at zero
    (and the initial training loss sits at the noise floor E||eps-x0||^2).
    """

    def __init__(self, rng: Rng, dim: int, heads: int, layers: int,
                 patch_len: int, channels: int):
        self.patch_len = patch_len
        self.channels = channels
        self.dim = dim
        self.in_proj = Linear(rng, channels, dim)
        self.t_fc1 = Linear(rng, dim, dim)
        self.t_fc2 = Linear(rng, dim, dim)
        self.segments = Tensor(rng.normal((3, dim)) * 0.02, requires_grad=True)
        self.blocks = [_DenoiserBlock(rng, dim, heads) for _ in range(layers)]
        self.final_mod = Linear(rng, dim, 2 * dim, zero_init=True)
        self.out_proj = Linear(rng, dim, channels, zero_init=True)

    def timestep_vector(self, t: float) -> Tensor:
        enc = Tensor(sinusoidal_encoding([t * _TIMESTEP_FREQ], self.dim))
        return self.t_fc2(gelu(self.t_fc1(enc)))  # [1, d]

    def __call__(self, x_t: Tensor, t: float, ctx: Tensor, prev: Tensor) -> Tensor:
        p, k = self.patch_len, self.channels
        if x_t.shape != (p, k):
            raise ShapeError(f"noisy patch shape {x_t.shape} != ({p}, {k})")
        if prev.shape != (p, k):
            raise ShapeError(f"previous patch shape {prev.shape} != ({p}, {k})")
        if ctx.ndim != 2 or ctx.shape[1] != self.dim:
            raise ShapeError(f"context shape {ctx.shape} incompatible with dim {self.dim}")
        s = ctx.shape[0]
        seg_ids = np.array([_SEG_CTX] * s + [_SEG_PREV] * p + [_SEG_NOISY] * p)
        tokens = concat([ctx, self.in_proj(prev), self.in_proj(x_t)], axis=0)
        tokens = tokens + embedding(self.segments, seg_ids)
        tokens = tokens + Tensor(sinusoidal_encoding(np.arange(s + 2 * p), self.dim))
        t_vec = self.timestep_vector(t)
        for block in self.blocks:
            tokens = block(tokens, t_vec)
        noisy = tokens[s + p :, :]
        m = self.final_mod(t_vec)
        shift, scale = m[:, : self.dim], m[:, self.dim :]
        noisy = layernorm(noisy) * (scale + 1.0) + shift
        return self.out_proj(noisy)


def velocity(denoiser: PatchDenoiser, x_t: Tensor, t: float, ctx: Tensor,
             prev: Tensor) -> Tensor:
    """Predicted velocity at (x_t, t) given planning context and the
    previous patch. Thin functional alias over the denoiser call."""
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"timestep {t} outside [0, 1]")
    return denoiser(x_t, t, ctx, prev)


def flow_loss(
    denoiser: PatchDenoiser,
    x0: np.ndarray,
    ctx: Tensor,
    prev,
    rng: Rng,
    flow: FlowConfig,
    null_condition: NullCondition | None = None,
) -> Tensor:
    """Single-sample flow-matching regression loss (mean over elements).

    Draw order per call: drop-uniform, timestep normal, noise normal --
    so a sequence of calls is reproducible from one rng stream. With
    probability `cond_drop_prob` the context is swapped for the learned
    null condition (required for classifier-free guidance). `prev` may be
    a Tensor when it is itself trainable (the begin-of-sequence patch).
    """
    x0 = np.asarray(x0)
    drop = float(rng.uniform(())) < flow.cond_drop_prob
    if drop:
        if null_condition is None:
            raise ConfigError("cond_drop_prob > 0 requires a null condition")
        ctx = null_condition()
    t = sample_timestep(rng)
    eps = rng.normal(x0.shape)
    x_t = (1.0 - t) * x0 + t * eps
    target = eps - x0  # d/dt[(1-t) x0 + t eps]
    prev_t = prev if isinstance(prev, Tensor) else Tensor(prev)
    v = velocity(denoiser, Tensor(x_t), t, ctx, prev_t)
    diff = v - Tensor(target)
    return tmean(diff * diff)


def euler_integrate(velocity_fn, x_start: np.ndarray, steps: int) -> np.ndarray:
    """Fixed-step Euler from t=1 down to t=0: x <- x - h*v(x, t).

    `velocity_fn(x, t) -> array` is evaluated at t = 1, 1-h, ..., h.
    Exact on fields constant in x and t for any step count.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    x = np.array(x_start, dtype=np.float64, copy=True)
    h = 1.0 / steps
    for j in range(steps):
        t = 1.0 - j * h
        x = x - h * np.asarray(velocity_fn(x, t))
    return x


def euler_sample(
    denoiser: PatchDenoiser,
    ctx: Tensor,
    prev: np.ndarray,
    flow: FlowConfig,
    rng: Rng,
    null_condition: NullCondition | None = None,
) -> np.ndarray:
    """Draw x ~ N(0,I) and integrate the guided field down to t=0.

    Guidance: v = v_uncond + s*(v_cond - v_uncond). At s=1 the
    unconditional branch is never evaluated, so the trajectory equals the
    conditional-only one bit for bit. The previous patch stays in both
    branches: it is autoregressive state, not creator intent.
    """
    if flow.cfg_scale != 1.0 and null_condition is None:
        raise ConfigError("cfg_scale != 1 requires a null condition")
    prev_t = Tensor(np.asarray(prev))
    eps = rng.normal((denoiser.patch_len, denoiser.channels))

    def guided(x: np.ndarray, t: float) -> np.ndarray:
        with no_grad():
            v_cond = velocity(denoiser, Tensor(x), t, ctx, prev_t).data
            if flow.cfg_scale == 1.0:
                return v_cond
            v_uncond = velocity(denoiser, Tensor(x), t, null_condition(), prev_t).data
            return v_uncond + flow.cfg_scale * (v_cond - v_uncond)

    return euler_integrate(guided, eps, flow.euler_steps)
