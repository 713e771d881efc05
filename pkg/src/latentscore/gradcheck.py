"""Finite-difference gradient verification.

The checker never touches the tape's backward formulas: it re-evaluates
the forward function at perturbed inputs, so it is an independent oracle
for whatever `backward()` produced.
"""

from __future__ import annotations

import numpy as np

from .tensor import Rng, Tensor, no_grad

__all__ = ["finite_difference_grad", "max_relative_error"]


def finite_difference_grad(f, t: Tensor, h: float = 1e-5, entries=None) -> dict:
    """Central differences of scalar `f()` w.r.t. selected entries of `t`.

    `entries` is an iterable of flat indices (default: all). Returns
    {flat_index: derivative}. `f` must be a pure function of the current
    `.data` contents.
    """
    flat = t.data.reshape(-1)
    if entries is None:
        entries = range(flat.size)
    grads = {}
    with no_grad():
        for idx in entries:
            orig = flat[idx]
            flat[idx] = orig + h
            hi = f().item()
            flat[idx] = orig - h
            lo = f().item()
            flat[idx] = orig
            grads[int(idx)] = (hi - lo) / (2.0 * h)
    return grads


def max_relative_error(
    f,
    tensors,
    h: float = 1e-5,
    max_entries_per_tensor: int | None = None,
    seed: int = 0,
) -> float:
    """Worst-case disagreement between the tape and central differences.

    Per entry the error is |g_tape - g_fd| / max(1, |g_tape|, |g_fd|),
    i.e. relative for O(1)-or-larger gradients with an absolute floor for
    near-zero ones (where finite differences bottom out in noise anyway).
    Large tensors can be subsampled via `max_entries_per_tensor`.
    """
    tensors = list(tensors)
    for t in tensors:
        t.zero_grad()
    loss = f()
    loss.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        for t in tensors
    ]
    rng = Rng(seed)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        n = t.data.size
        if max_entries_per_tensor is not None and n > max_entries_per_tensor:
            entries = sorted(
                set(int(i) for i in rng.integers(0, n, size=max_entries_per_tensor))
            )
        else:
            entries = range(n)
        fd = finite_difference_grad(f, t, h=h, entries=entries)
        gf = g.reshape(-1)
        for idx, d in fd.items():
            err = abs(gf[idx] - d) / max(1.0, abs(gf[idx]), abs(d))
            worst = max(worst, err)
    return worst
