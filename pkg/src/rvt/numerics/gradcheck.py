"""Central finite-difference checks against :func:`backward`."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from rvt.numerics.tensor import Tensor, backward


def numerical_gradient(
    f: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-5,
    entries: Sequence[np.ndarray | None] | None = None,
) -> list[np.ndarray]:
    """Central differences ``(f(x+h) - f(x-h)) / 2h`` for entries of every input.

    ``f`` receives constant tensors built from the given arrays (their dtype is
    kept).  ``entries[k]``, if given, restricts input ``k`` to those flat
    indices; the remaining entries of the result are left at zero.
    """
    arrays = [np.array(a, copy=True) for a in inputs]
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        chosen = range(flat.size) if entries is None or entries[k] is None else entries[k]
        for idx in chosen:
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = float(f(*[Tensor(a) for a in arrays]).data.sum())
            flat[idx] = orig - h
            f_minus = float(f(*[Tensor(a) for a in arrays]).data.sum())
            flat[idx] = orig
            g.reshape(-1)[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_gradient(f: Callable[..., Tensor], inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    leaves = [Tensor(np.array(a, copy=True), requires_grad=True) for a in inputs]
    out = f(*leaves)
    # non-scalar outputs are summed, matching numerical_gradient
    backward(out, None if out.size == 1 else np.ones_like(out.data))
    return [np.zeros(leaf.shape) if leaf.grad is None else leaf.grad.astype(np.float64) for leaf in leaves]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3, scale: float | None = None) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor * scale)``.

    ``scale`` is the largest gradient magnitude, so entries many orders below
    the gradient's own scale are judged against that scale rather than
    against themselves.  Pass ``scale`` explicitly when comparing a subset.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if scale is None:
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float((np.abs(a - n) / denom).max())


def finite_diff_check(
    f: Callable[..., Tensor],
    x: np.ndarray | Tensor | Sequence[np.ndarray],
    h: float = 1e-5,
    dtype=np.float64,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    With ``dtype=float32`` the analytic gradient is taken in float32 while
    the finite differences are evaluated in float64; float32 differences at
    ``h=1e-5`` would be dominated by rounding.  ``sample`` limits the
    finite differences to that many random entries per input, which makes
    whole-network checks affordable.
    """
    if isinstance(x, (np.ndarray, Tensor)):
        x = [x]
    base = [np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64) for a in x]
    analytic = analytic_gradient(f, [a.astype(dtype) for a in base])
    # one scale for the whole check: an input whose true gradient is zero
    # (e.g. a key bias under softmax) is judged against the other inputs
    scale = max(float(np.abs(a).max(initial=0.0)) for a in analytic)
    if sample is None:
        numeric = numerical_gradient(f, base, h)
        return max(relative_error(a, n, scale=max(scale, float(np.abs(n).max(initial=0.0)))) for a, n in zip(analytic, numeric))
    rng = rng if rng is not None else np.random.default_rng(0)
    entries = [rng.choice(a.size, size=min(sample, a.size), replace=False) for a in base]
    numeric = numerical_gradient(f, base, h, entries)
    return max(
        relative_error(a.reshape(-1)[idx], n.reshape(-1)[idx], scale=scale)
        for a, n, idx in zip(analytic, numeric, entries)
    )
