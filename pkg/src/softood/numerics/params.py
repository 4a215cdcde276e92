"""Named parameter blocks with per-block gradient and moment buffers."""

from __future__ import annotations

import numpy as np


class ParamStore:
    """Holds named parameter blocks plus the buffers the optimizer needs.

    Gradient buffers always match their block's shape.  Moment buffers start
    at zero and are touched only by :func:`softood.numerics.optim.optimizer_step`,
    which also owns the per-block step counters used for bias correction.
    """

    def __init__(self) -> None:
        self._params: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._step: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._params:
            raise KeyError(f"block {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"block {name!r} has non-finite values")
        self._params[name] = arr
        self._grads[name] = np.zeros_like(arr)
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        self._step[name] = 0

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._params[name].shape:
            raise ValueError(
                f"block {name!r} has shape {self._params[name].shape}, got {arr.shape}"
            )
        self._params[name] = arr.copy()

    def block_names(self, prefix: str | None = None) -> list[str]:
        names = sorted(self._params)
        if prefix is None:
            return names
        return [n for n in names if n == prefix or n.startswith(prefix + ".")]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def add_grad(self, name: str, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self._params[name].shape:
            raise ValueError(
                f"gradient for {name!r} has shape {g.shape}, "
                f"expected {self._params[name].shape}"
            )
        self._grads[name] += g

    def zero_grads(self, prefix: str | None = None) -> None:
        for name in self.block_names(prefix):
            self._grads[name].fill(0.0)

    def grads(self, prefix: str | None = None) -> dict[str, np.ndarray]:
        return {n: self._grads[n].copy() for n in self.block_names(prefix)}

    def step_count(self, name: str) -> int:
        return self._step[name]

    # Used by the optimizer only.
    def _moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m[name], self._v[name]

    def _bump_step(self, name: str) -> int:
        self._step[name] += 1
        return self._step[name]

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name in self.block_names():
            clone._params[name] = self._params[name].copy()
            clone._grads[name] = self._grads[name].copy()
            clone._m[name] = self._m[name].copy()
            clone._v[name] = self._v[name].copy()
            clone._step[name] = self._step[name]
        return clone

    def params_equal(self, other: "ParamStore") -> bool:
        if self.block_names() != other.block_names():
            return False
        return all(
            np.array_equal(self._params[n], other._params[n]) for n in self.block_names()
        )

    def state_bytes(self) -> bytes:
        """Concatenated raw bytes of all blocks, for bit-exact comparisons."""
        return b"".join(self._params[n].tobytes() for n in self.block_names())
