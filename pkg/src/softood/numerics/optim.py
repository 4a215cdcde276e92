"""Adaptive-moment optimizer with optional decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from softood.numerics.params import ParamStore

MODES = ("adam", "adamw")


@dataclass(frozen=True)
class OptimConfig:
    lr: float
    mode: str = "adam"  # "adamw" adds decoupled weight decay
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must be in [0, 1)")


def optimizer_step(
    store: ParamStore, config: OptimConfig, blocks: list[str] | None = None
) -> None:
    """Bias-corrected adaptive-moment update; zeroes the used gradients."""
    names = store.block_names() if blocks is None else list(blocks)
    for name in names:
        if name not in store:
            raise KeyError(f"unknown block {name!r}")
        g = store.grad(name)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for block {name!r}")
        t = store._bump_step(name)
        m, v = store._moments(name)
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1**t)
        v_hat = v / (1.0 - config.beta2**t)
        theta = store[name]
        if config.mode == "adamw" and config.weight_decay > 0.0:
            theta = theta * (1.0 - config.lr * config.weight_decay)
        store[name] = theta - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
        store.grad(name).fill(0.0)
