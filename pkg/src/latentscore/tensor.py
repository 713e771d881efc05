"""N-dimensional float arrays with a reverse-mode gradient tape.

The engine is deliberately small: a fixed op set (matmul, elementwise
arithmetic, softmax, layernorm, GELU, embedding gather, reshape/transpose,
reductions, straight-through quantization, attention) that everything
downstream composes from. Arrays are numpy-backed. float64 is the default
so gradients can be validated against central finite differences; a
float32 switch exists for speed. All randomness flows through `Rng`
(PCG64), so one seed pins every forward pass bit-for-bit on a platform.

Broadcasting is supported only where the model needs it: bias rows over
sequences and batch dimensions in matmul. Anything fancier raises.
"""

from __future__ import annotations

import contextlib
import hashlib
import math

import numpy as np

__all__ = [
    "Tensor",
    "Rng",
    "ShapeError",
    "no_grad",
    "set_default_dtype",
    "default_dtype",
    "derive_seed",
    "add",
    "sub",
    "mul",
    "matmul",
    "reshape",
    "permute",
    "swapaxes",
    "concat",
    "tsum",
    "tmean",
    "softmax",
    "layernorm",
    "gelu",
    "embedding",
    "ste_round_clip",
    "attention",
    "sinusoidal_encoding",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible; message names both shapes."""


_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True

# Additive mask bias large enough that exp(bias - max) underflows to 0.0
# exactly, in both float32 and float64.
_MASK_BIAS = -1e30


def set_default_dtype(dtype) -> None:
    """Switch the runtime precision. Tests assume float64."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference / finite-difference probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from arbitrary labels, via SHA-256."""
    text = ":".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype != _DEFAULT_DTYPE:
        arr = arr.astype(_DEFAULT_DTYPE)
    return arr


class Tensor:
    """Array node on the gradient tape.

    `data` is the value, `grad` the accumulated adjoint (same shape, or
    None before backward), `requires_grad` marks leaves to optimize.
    Graphs are rebuilt every forward pass; `backward()` on a scalar loss
    fills grads for every reachable requires_grad node.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Accumulates into `.grad` of every requires_grad node reachable
        from this one. Call `zero_grad()` on leaves between steps.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ----------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _track(*tensors) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in tensors)


def _attach(out: Tensor, parents, backward_fn) -> None:
    out.requires_grad = True
    out._parents = tuple(p for p in parents if p.requires_grad)
    out._backward = backward_fn


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data + b.data)
    if _track(a, b):
        def _bw():
            g = out.grad
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(g, b.data.shape))
        _attach(out, (a, b), _bw)
    return out


def neg(a) -> Tensor:
    a = _lift(a)
    out = Tensor(-a.data)
    if _track(a):
        def _bw():
            _accum(a, -out.grad)
        _attach(out, (a,), _bw)
    return out


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data - b.data)
    if _track(a, b):
        def _bw():
            g = out.grad
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(-g, b.data.shape))
        _attach(out, (a, b), _bw)
    return out


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data * b.data)
    if _track(a, b):
        def _bw():
            g = out.grad
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
            _accum(b, _unbroadcast(g * a.data, b.data.shape))
        _attach(out, (a, b), _bw)
    return out


# ---------------------------------------------------------------------------
# contraction and layout


def matmul(a, b) -> Tensor:
    """Batched matrix product. Batch dims must match exactly, or one
    operand may be a plain matrix; no other broadcasting."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands: {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    batch_a, batch_b = a.data.shape[:-2], b.data.shape[:-2]
    if batch_a and batch_b and batch_a != batch_b:
        raise ShapeError(f"matmul batch dims disagree: {a.data.shape} @ {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    if _track(a, b):
        def _bw():
            g = out.grad
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                _accum(a, _unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                _accum(b, _unbroadcast(gb, b.data.shape))
        _attach(out, (a, b), _bw)
    return out


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data.reshape(shape))
    if _track(a):
        def _bw():
            _accum(a, out.grad.reshape(a.data.shape))
        _attach(out, (a,), _bw)
    return out


def permute(a, axes) -> Tensor:
    a = _lift(a)
    axes = tuple(axes)
    out = Tensor(np.transpose(a.data, axes))
    if _track(a):
        inverse = tuple(np.argsort(axes))
        def _bw():
            _accum(a, np.transpose(out.grad, inverse))
        _attach(out, (a,), _bw)
    return out


def swapaxes(a, ax1, ax2) -> Tensor:
    a = _lift(a)
    out = Tensor(np.swapaxes(a.data, ax1, ax2))
    if _track(a):
        def _bw():
            _accum(a, np.swapaxes(out.grad, ax1, ax2))
        _attach(out, (a,), _bw)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    if _track(*ts):
        sizes = [t.data.shape[axis] for t in ts]
        def _bw():
            g = out.grad
            offset = 0
            for t, span in zip(ts, sizes):
                if t.requires_grad:
                    key = [slice(None)] * g.ndim
                    key[axis] = slice(offset, offset + span)
                    _accum(t, g[tuple(key)])
                offset += span
        _attach(out, ts, _bw)
    return out


def getitem(a, key) -> Tensor:
    """Basic indexing (ints and slices) only; gradient scatters back."""
    a = _lift(a)
    out = Tensor(np.array(a.data[key]))
    if _track(a):
        def _bw():
            buf = np.zeros_like(a.data)
            buf[key] = out.grad
            _accum(a, buf)
        _attach(out, (a,), _bw)
    return out


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axis = _norm_axis(axis, a.data.ndim)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    if _track(a):
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                for ax in sorted(axis):
                    g = np.expand_dims(g, ax)
            _accum(a, np.broadcast_to(g, a.data.shape))
        _attach(out, (a,), _bw)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axis = _norm_axis(axis, a.data.ndim)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    if _track(a):
        if axis is None:
            count = a.data.size
        else:
            count = int(np.prod([a.data.shape[ax] for ax in axis]))
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                for ax in sorted(axis):
                    g = np.expand_dims(g, ax)
            _accum(a, np.broadcast_to(g, a.data.shape) / count)
        _attach(out, (a,), _bw)
    return out


# ---------------------------------------------------------------------------
# fused nonlinearities (one tape node each keeps the graph small)


def softmax(a, axis: int = -1) -> Tensor:
    """Max-subtracted softmax: outputs in (0,1), summing to 1 along axis."""
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if _track(a):
        def _bw():
            g = out.grad
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accum(a, y * (g - dot))
        _attach(out, (a,), _bw)
    return out


def layernorm(a, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply
    an optional per-channel affine. `eps > 0` keeps constant rows finite."""
    if eps <= 0:
        raise ValueError(f"layernorm eps must be positive, got {eps}")
    a = _lift(a)
    n = a.data.shape[-1]
    if gain is not None and gain.data.shape != (n,):
        raise ShapeError(f"layernorm gain shape {gain.data.shape} != ({n},)")
    if bias is not None and bias.data.shape != (n,):
        raise ShapeError(f"layernorm bias shape {bias.data.shape} != ({n},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    data = xh
    if gain is not None:
        data = data * gain.data
    if bias is not None:
        data = data + bias.data
    out = Tensor(data)
    parents = [a] + [t for t in (gain, bias) if t is not None]
    if _track(*parents):
        def _bw():
            g = out.grad
            lead = tuple(range(g.ndim - 1))
            if bias is not None and bias.requires_grad:
                _accum(bias, g.sum(axis=lead))
            if gain is not None and gain.requires_grad:
                _accum(gain, (g * xh).sum(axis=lead))
            if a.requires_grad:
                dxh = g * gain.data if gain is not None else g
                m1 = dxh.mean(axis=-1, keepdims=True)
                m2 = (dxh * xh).mean(axis=-1, keepdims=True)
                _accum(a, inv * (dxh - m1 - xh * m2))
        _attach(out, parents, _bw)
    return out


_GELU_K0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_K1 = 0.044715


def gelu(a) -> Tensor:
    """tanh-approximated GELU (agrees with the erf form to ~1e-3)."""
    a = _lift(a)
    x = a.data
    inner = _GELU_K0 * (x + _GELU_K1 * x * x * x)
    th = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + th))
    if _track(a):
        def _bw():
            sech2 = 1.0 - th * th
            local = 0.5 * (1.0 + th) + 0.5 * x * sech2 * _GELU_K0 * (
                1.0 + 3.0 * _GELU_K1 * x * x
            )
            _accum(a, out.grad * local)
        _attach(out, (a,), _bw)
    return out


def embedding(table, ids) -> Tensor:
    """Row gather from a [V, d] table; gradient scatter-adds per id."""
    table = _lift(table)
    idx = np.asarray(ids)
    if idx.dtype.kind not in "iu":
        raise TypeError(f"embedding ids must be integers, got dtype {idx.dtype}")
    vocab = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError(
            f"embedding id out of range: ids span [{idx.min()}, {idx.max()}], table has {vocab} rows"
        )
    out = Tensor(table.data[idx])
    if _track(table):
        def _bw():
            buf = np.zeros_like(table.data)
            np.add.at(buf, idx, out.grad)
            _accum(table, buf)
        _attach(out, (table,), _bw)
    return out


def ste_round_clip(a, step: float, levels: int) -> Tensor:
    """Snap every value onto the grid step*{-levels..levels}; the backward
    pass treats the round+clip as identity (straight-through)."""
    if step <= 0:
        raise ValueError(f"quantization step must be positive, got {step}")
    if levels < 1:
        raise ValueError(f"level bound must be >= 1, got {levels}")
    a = _lift(a)
    out = Tensor(np.clip(np.round(a.data / step), -levels, levels) * step)
    if _track(a):
        def _bw():
            _accum(a, out.grad)
        _attach(out, (a,), _bw)
    return out


# ---------------------------------------------------------------------------
# attention


def attention(q, k, v, mask=None) -> Tensor:
    """Scaled dot-product attention over the last two axes.

    `mask` is a boolean [queries, keys] allow-matrix; denied positions get
    a large negative bias before the softmax. A fully denied query row
    yields an all-zero output row (the convention for unused positions).
    """
    q, k, v = _lift(q), _lift(k), _lift(v)
    dh = q.data.shape[-1]
    if k.data.shape[-1] != dh:
        raise ShapeError(f"attention head dims disagree: q {q.data.shape}, k {k.data.shape}")
    if v.data.shape[-2] != k.data.shape[-2]:
        raise ShapeError(f"attention k/v lengths disagree: k {k.data.shape}, v {v.data.shape}")
    scores = mul(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh))
    if mask is not None:
        allow = np.asarray(mask, dtype=bool)
        expected = (q.data.shape[-2], k.data.shape[-2])
        if allow.shape != expected:
            raise ShapeError(f"attention mask shape {allow.shape} != {expected}")
        bias = np.where(allow, 0.0, _MASK_BIAS)
        scores = add(scores, Tensor(bias))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    if mask is not None:
        alive = allow.any(axis=-1)
        if not alive.all():
            out = mul(out, Tensor(alive[:, None].astype(out.data.dtype)))
    return out


# ---------------------------------------------------------------------------
# constants


def sinusoidal_encoding(positions, dim: int) -> np.ndarray:
    """Absolute sinusoidal position code: sin half then cos half.

    `positions` may be fractional (used for diffusion timesteps as well
    as token indices). Returns a plain [len(positions), dim] array.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    if half == 0:
        raise ValueError(f"encoding dim must be >= 2, got {dim}")
    exponents = np.arange(half, dtype=np.float64) / max(half - 1, 1)
    freqs = np.exp(-math.log(10000.0) * exponents)
    angles = pos * freqs
    table = np.zeros((pos.shape[0], dim), dtype=np.float64)
    table[:, :half] = np.sin(angles)
    table[:, half : 2 * half] = np.cos(angles)
    return table.astype(_DEFAULT_DTYPE)


# ---------------------------------------------------------------------------
# randomness


class Rng:
    """Deterministic random source: numpy PCG64 behind a thin wrapper.

    Identical seeds give identical streams across process runs (for a
    fixed numpy major version). The full generator state round-trips
    through `state()` / `set_state()` so training can resume bit-exactly.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=_DEFAULT_DTYPE)

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(size=shape, dtype=_DEFAULT_DTYPE)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state
