"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from softood.numerics.params import ParamStore


def finite_diff_check(
    value_fn: Callable[[ParamStore], float],
    grad_fn: Callable[[ParamStore], dict[str, np.ndarray]],
    store: ParamStore,
    h: float = 1e-4,
    blocks: list[str] | None = None,
) -> float:
    """Max over parameters of |analytic - numeric| / max(1, |numeric|).

    ``value_fn`` must be pure (deterministic, dropout off); ``grad_fn``
    returns analytic gradients per block without mutating the store.
    """
    names = store.block_names() if blocks is None else list(blocks)
    analytic = grad_fn(store)
    worst = 0.0
    for name in names:
        theta = store[name]
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != theta.shape:
            raise ValueError(f"analytic gradient shape mismatch for {name!r}")
        flat = theta.ravel()
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            up = value_fn(store)
            flat[idx] = original - h
            down = value_fn(store)
            flat[idx] = original
            numeric = (up - down) / (2.0 * h)
            err = abs(grad.ravel()[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
