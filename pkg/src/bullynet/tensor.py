"""Dense arrays and the primitive math every layer is built from.

Values are plain numpy arrays in row-major layout. Ops validate shapes on
entry and raise ShapeError with both offending shapes. All ops here are pure
and never produce NaN/Inf from finite inputs (sigmoid and softmax use the
numerically safe forms). Arrays are treated as immutable once built, so
results may be shared read-only across workers; an Rng is single-owner and
must never be shared between threads.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import ShapeError

#: Dense row-major array of real numbers; shape * dtype live on the array.
Tensor = np.ndarray


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a[m,k] and b[k,n]."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: Tensor) -> Tensor:
    # exp(-|x|) <= 1, so neither branch can overflow
    x = np.asarray(x)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def relu(x: Tensor) -> Tensor:
    return np.maximum(np.asarray(x), 0)


ACTIVATIONS = {"sigmoid": sigmoid, "tanh": np.tanh, "relu": relu}


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise sigmoid / tanh / relu."""
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None
    return fn(x)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    x = np.asarray(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis; all other dims must match."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last needs equal dims except the last: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=-1)


class Rng:
    """Deterministic random source: same seed gives the same stream everywhere.

    Backed by PCG64, whose output is fixed across platforms for a given seed.
    `child(tag)` derives an independent stream from (seed, tag) so that
    separate consumers (init, dropout, shuffling, splits) never share state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, tag: str) -> "Rng":
        digest = hashlib.sha256(f"{self.seed}/{tag}".encode()).digest()
        return Rng(int.from_bytes(digest[:8], "little"))

    def uniform(self, low: float, high: float, shape, dtype=np.float64) -> Tensor:
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def random(self, shape) -> Tensor:
        return self._gen.random(size=shape)

    def glorot(self, shape, fan_in: int, fan_out: int, dtype=np.float64) -> Tensor:
        """Uniform Glorot draw with the given fan-in/fan-out."""
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.uniform(-limit, limit, shape, dtype=dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)
