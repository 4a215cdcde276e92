"""Small MLP with leaky-rectifier activations and inverted dropout.

Every layer is affine -> leaky rectifier, with inverted dropout applied to
hidden activations (never to the output layer).  Kept units are scaled by
1/(1-rate) so the expected activation matches the dropout-off output.
Masks are drawn from a generator seeded per call, so a fixed seed
reproduces the exact same masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from softood.numerics.params import ParamStore
from softood.validation import as_float_array


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    negative_slope: float = 0.01
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if len(self.widths) < 2:
            raise ValueError("MlpSpec needs at least one layer (two widths)")
        if any(w <= 0 for w in self.widths):
            raise ValueError("layer widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        if self.negative_slope < 0.0:
            raise ValueError("negative slope must be >= 0")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


@dataclass
class MlpCache:
    inputs: list[np.ndarray]  # per-layer input, post previous dropout
    pre_acts: list[np.ndarray]  # per-layer affine outputs
    masks: list[np.ndarray | None]  # per-layer dropout masks (None when off)
    squeeze: bool  # input arrived as a single vector


def init_mlp_params(
    spec: MlpSpec, store: ParamStore, prefix: str, rng: np.random.Generator
) -> None:
    """He-style normal init scaled for the leaky rectifier; zero biases."""
    gain = 2.0 / (1.0 + spec.negative_slope**2)
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        std = np.sqrt(gain / fan_in)
        store.add(f"{prefix}.W{i}", rng.normal(0.0, std, size=(fan_in, fan_out)))
        store.add(f"{prefix}.b{i}", np.zeros(fan_out))


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


def _leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, 1.0, slope)


def mlp_forward(
    spec: MlpSpec,
    store: ParamStore,
    prefix: str,
    x: np.ndarray,
    train: bool = False,
    mask_seed: int | None = None,
) -> tuple[np.ndarray, MlpCache]:
    """Forward pass for a single vector or a (batch, in_dim) matrix."""
    arr = as_float_array(x, name="mlp input")
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != spec.in_dim:
        raise ValueError(
            f"mlp input must have width {spec.in_dim}, got shape {arr.shape}"
        )

    dropout_on = train and spec.dropout > 0.0 and spec.n_layers > 1
    if dropout_on and mask_seed is None:
        raise ValueError("dropout is on but no mask seed was supplied")
    mask_rng = np.random.Generator(np.random.PCG64(mask_seed)) if dropout_on else None

    inputs: list[np.ndarray] = []
    pre_acts: list[np.ndarray] = []
    masks: list[np.ndarray | None] = []
    h = arr
    for i in range(spec.n_layers):
        inputs.append(h)
        z = h @ store[f"{prefix}.W{i}"] + store[f"{prefix}.b{i}"]
        pre_acts.append(z)
        h = _leaky(z, spec.negative_slope)
        if dropout_on and i < spec.n_layers - 1:
            keep = 1.0 - spec.dropout
            mask = (mask_rng.random(h.shape) < keep) / keep
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)

    out = h[0] if squeeze else h
    return out, MlpCache(inputs=inputs, pre_acts=pre_acts, masks=masks, squeeze=squeeze)


def mlp_backward(
    spec: MlpSpec,
    store: ParamStore,
    prefix: str,
    cache: MlpCache,
    d_out: np.ndarray,
    scale: float = 1.0,
) -> np.ndarray:
    """Accumulate parameter gradients; returns the gradient w.r.t. the input."""
    d = np.asarray(d_out, dtype=np.float64)
    if cache.squeeze:
        d = d[None, :]
    for i in reversed(range(spec.n_layers)):
        if cache.masks[i] is not None:
            d = d * cache.masks[i]
        d = d * _leaky_grad(cache.pre_acts[i], spec.negative_slope)
        x_in = cache.inputs[i]
        store.add_grad(f"{prefix}.W{i}", scale * (x_in.T @ d))
        store.add_grad(f"{prefix}.b{i}", scale * d.sum(axis=0))
        d = d @ store[f"{prefix}.W{i}"].T
    return d[0] if cache.squeeze else d
