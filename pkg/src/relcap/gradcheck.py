"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``param`` (perturbed in place).

    ``index`` restricts the estimate to a subset of flat positions; other
    entries of the result are left at zero.
    """
    flat = param.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    positions = range(flat.size) if index is None else index
    with no_grad():
        for k in positions:
            orig = flat[k]
            flat[k] = orig + step
            fp = float(fn().data)
            flat[k] = orig - step
            fm = float(fn().data)
            flat[k] = orig
            out[k] = (fp - fm) / (2.0 * step)
    return out.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8, zero_tol: float = 0.0) -> float:
    """max |a - n| / max(|a|, floor), elementwise.

    Entries where both |a| and |n| are at most ``zero_tol`` count as agreeing:
    a gradient that is exactly zero (e.g. attention key biases, which softmax
    ignores) leaves only round-off in the difference quotient.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    err = np.abs(a - n) / np.maximum(np.abs(a), floor)
    err[(np.abs(a) <= zero_tol) & (np.abs(n) <= zero_tol)] = 0.0
    return float(np.max(err))


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    zero_tol: float = 0.0,
    floor: float = 1e-8,
) -> dict[str, float]:
    """Compare tape gradients of ``fn()`` against central differences.

    Returns ``{param name or index: relative error}`` (see ``relative_error``).
    Whole-model losses need a larger ``floor``: at step 1e-5 the difference
    quotient of a loss near 1 carries round-off around 1e-10, so tiny entries
    cannot be resolved to 1e-4 relative accuracy.  ``floor=1e-5`` turns the
    test into an absolute one (1e-9 at tol 1e-4) below that magnitude.  With ``max_entries``
    set, only that many randomly chosen entries per parameter are probed.
    """
    for p in params:
        p.zero_grad()
    loss = fn()
    loss.backward()
    rng = rng or np.random.default_rng(0)
    report = {}
    for i, p in enumerate(params):
        analytic = p.grad.reshape(-1).copy()
        if max_entries is not None and p.data.size > max_entries:
            idx = rng.choice(p.data.size, size=max_entries, replace=False)
        else:
            idx = np.arange(p.data.size)
        numeric = numeric_grad(fn, p, step, index=idx).reshape(-1)
        report[p.name or str(i)] = relative_error(analytic[idx], numeric[idx], floor=floor, zero_tol=zero_tol)
    return report
