"""Transformer building blocks shared by the planner and the refiner."""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    Rng,
    ShapeError,
    Tensor,
    attention,
    gelu,
    layernorm,
    matmul,
    permute,
    reshape,
)

__all__ = [
    "Module",
    "Linear",
    "LayerNorm",
    "MultiHeadAttention",
    "FeedForward",
    "EncoderBlock",
    "full_mask",
    "causal_mask",
    "prefix_causal_mask",
]


class Module:
    """Tiny parameter registry: walks attributes for Tensors and
    submodules, yielding dotted stable names for checkpointing."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()


class Linear(Module):
    """y = x @ W + b with W of shape [d_in, d_out].

    Default init: N(0, 1/d_in). `zero_init` nulls the layer, used for
    residual-branch outputs so blocks start as identities.
    """

    def __init__(self, rng: Rng, d_in: int, d_out: int, bias: bool = True,
                 std: float | None = None, zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            scale = std if std is not None else 1.0 / math.sqrt(d_in)
            w = rng.normal((d_in, d_out)) * scale
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gain, self.shift, eps=self.eps)


class MultiHeadAttention(Module):
    def __init__(self, rng: Rng, dim: int, heads: int):
        if dim % heads != 0:
            raise ShapeError(f"model dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        seq, dim = x.shape
        def split(t):  # [s, d] -> [h, s, dh]
            return permute(reshape(t, (seq, self.heads, self.head_dim)), (1, 0, 2))
        heads_out = attention(split(self.wq(x)), split(self.wk(x)), split(self.wv(x)), mask)
        merged = reshape(permute(heads_out, (1, 0, 2)), (seq, dim))
        return self.wo(merged)


class FeedForward(Module):
    def __init__(self, rng: Rng, dim: int, hidden_mult: int = 4):
        self.fc1 = Linear(rng, dim, hidden_mult * dim)
        self.fc2 = Linear(rng, hidden_mult * dim, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-norm residual block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, rng: Rng, dim: int, heads: int):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.ln2 = LayerNorm(dim)
        self.mlp = FeedForward(rng, dim)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        x = x + self.mlp(self.ln2(x))
        return x


# ---------------------------------------------------------------------------
# attention masks (boolean allow-matrices, queries x keys)


def full_mask(n: int) -> np.ndarray:
    return np.ones((n, n), dtype=bool)


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def prefix_causal_mask(prefix_len: int, total_len: int) -> np.ndarray:
    """Bidirectional within the first `prefix_len` positions, causal over
    the rest; the prefix is visible to every position, and never sees the
    suffix (so suffix positions stay order-causal end to end)."""
    if not 0 <= prefix_len <= total_len:
        raise ValueError(f"prefix {prefix_len} outside [0, {total_len}]")
    idx = np.arange(total_len)
    allow = idx[None, :] < prefix_len  # prefix keys visible to all queries
    suffix_q = idx[:, None] >= prefix_len
    suffix_k = idx[None, :] >= prefix_len
    allow = allow | (suffix_q & suffix_k & (idx[None, :] <= idx[:, None]))
    return allow
