"""Finite-difference gradient verification.

The engine computes in float32; checking derivatives against central
differences at float32 drowns in rounding noise, so the checker re-runs the
function under float64 (both for the analytic pass and the perturbed
forwards) and compares there.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward

__all__ = ["rel_error", "finite_diff_check"]


def rel_error(a: float, n: float) -> float:
    """|a - n| / max(1, |a|, |n|)."""
    return abs(a - n) / max(1.0, abs(a), abs(n))


def finite_diff_check(fn, inputs, eps: float = 1e-3, tol: float = 1e-3,
                      max_entries: int | None = None, rng=None,
                      grad_sources=None):
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor.  ``inputs`` is a list
    of float64 numpy arrays (float32 arrays are upcast).  Every input entry
    is checked unless ``max_entries`` caps the count, in which case a random
    subset per input is drawn from ``rng``.

    ``grad_sources`` supports checking parameters embedded in a model: a
    list aligned with ``inputs`` whose non-None entries are the graph nodes
    (typically Params) that receive the analytic gradient when ``fn`` binds
    the provided value into the model instead of feeding the leaf directly.
    In that case ``fn`` must leave the bound data in place; restore the
    original parameter values only after the check returns.

    Returns the worst relative error seen.  Raises AssertionError with the
    offending coordinate when any entry exceeds ``tol``.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    sources = list(grad_sources) if grad_sources is not None else [None] * len(arrays)
    if len(sources) != len(arrays):
        raise ValueError("grad_sources must align with inputs")

    for s in sources:
        if s is not None:
            s.grad = None
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(ts)
    if out.data.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued function")
    backward(out)
    grads = []
    for t, s in zip(ts, sources):
        node = t if s is None else s
        grads.append(node.grad.copy() if node.grad is not None
                     else np.zeros_like(t.data))
    for s in sources:
        if s is not None:
            s.grad = None

    def f(arrs) -> float:
        with_no = [Tensor(a.copy(), requires_grad=False) for a in arrs]
        return float(fn(with_no).data.reshape(()))

    worst = 0.0
    for k, a in enumerate(arrays):
        flat_idx = np.arange(a.size)
        if max_entries is not None and a.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            flat_idx = rng.choice(a.size, size=max_entries, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, a.shape) if a.ndim else ()
            orig = a[idx]
            a[idx] = orig + eps
            fp = f(arrays)
            a[idx] = orig - eps
            fm = f(arrays)
            a[idx] = orig
            num = (fp - fm) / (2.0 * eps)
            ana = float(grads[k][idx])
            err = rel_error(ana, num)
            worst = max(worst, err)
            if err > tol:
                raise AssertionError(
                    f"gradient mismatch at input {k} index {idx}: "
                    f"analytic={ana:.6g} numeric={num:.6g} rel_err={err:.3g}")
    return worst
