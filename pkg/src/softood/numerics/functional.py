"""Stateless numeric primitives: softmax, cross-entropy, normalization."""

from __future__ import annotations

import numpy as np

from softood.validation import as_float_array

LOG_EPS = 1e-12
NORM_EPS = 1e-12


def softmax(logits: np.ndarray, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    """Temperature softmax with max-subtraction for overflow safety."""
    if temperature <= 0.0:
        raise ValueError("softmax temperature must be positive")
    z = as_float_array(logits, name="logits") / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(target: np.ndarray, pred: np.ndarray) -> float:
    """-sum(target * log(pred)) with pred clamped at 1e-12 before the log."""
    t = as_float_array(target, name="target")
    p = as_float_array(pred, name="pred")
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: target {t.shape} vs pred {p.shape}")
    return float(-(t * np.log(np.maximum(p, LOG_EPS))).sum())


def entropy(p: np.ndarray) -> float:
    arr = as_float_array(p, name="distribution")
    nz = arr[arr > 0.0]
    return float(-(nz * np.log(nz)).sum())


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector (or each row of a matrix) to unit norm."""
    arr = as_float_array(v, name="vector")
    if arr.ndim == 1:
        norm = float(np.linalg.norm(arr))
        if norm <= NORM_EPS:
            raise ValueError("cannot normalize a (near-)zero vector")
        return arr / norm
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        bad = int(np.argmin(norms))
        raise ValueError(f"cannot normalize (near-)zero row {bad}")
    return arr / norms


def l2_normalize_backward(pre_norm: np.ndarray, d_z: np.ndarray) -> np.ndarray:
    """Gradient of z = v/||v|| w.r.t. v, applied rowwise."""
    v = np.atleast_2d(np.asarray(pre_norm, dtype=np.float64))
    dz = np.atleast_2d(np.asarray(d_z, dtype=np.float64))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    z = v / norms
    dv = (dz - z * (z * dz).sum(axis=1, keepdims=True)) / norms
    return dv[0] if np.asarray(pre_norm).ndim == 1 else dv
