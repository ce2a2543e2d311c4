"""Numerical core: float64 arrays, seeded RNG, initializers, gradient oracle.

Tensors are plain ``numpy.ndarray`` objects in float64, C order. The helpers
here add the shape checks and conventions the layers rely on.
"""
from __future__ import annotations

import math
from collections.abc import Callable, Iterator

import numpy as np

from .errors import NumericError, ShapeError

DTYPE = np.float64


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


class Rng:
    """Seeded random stream backed by the PCG64 bit generator.

    One instance per worker; derive worker streams with :meth:`spawn`.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, index: int) -> "Rng":
        return Rng(self.seed + int(index))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


_UNARY = {
    "tanh": np.tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": np.exp,
}
_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, *args) -> np.ndarray:
    """Apply a pointwise op. Binary ops allow equal shapes or a scalar operand."""
    arrays = [np.asarray(a, dtype=DTYPE) for a in args]
    if op in _UNARY:
        if len(arrays) != 1:
            raise ShapeError(f"{op} takes one operand, got {len(arrays)}")
        return _UNARY[op](arrays[0])
    if op in _BINARY:
        if len(arrays) != 2:
            raise ShapeError(f"{op} takes two operands, got {len(arrays)}")
        a, b = arrays
        if a.shape != b.shape and a.size != 1 and b.size != 1:
            raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}")
        if a.size == 1 and a.shape != b.shape:
            a = a.reshape(())
        if b.size == 1 and a.shape != b.shape:
            b = b.reshape(())
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_param(shape, scheme: str, rng: Rng | None = None, fan=None) -> np.ndarray:
    """Initialize a parameter array.

    ``fan`` overrides the (fan_in, fan_out) pair; by default the last axis is
    fan_out and the product of the remaining axes is fan_in.
    """
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"shape must be positive, got {shape}")
    if scheme == "zeros":
        return np.zeros(shape, dtype=DTYPE)
    if scheme == "ones":
        return np.ones(shape, dtype=DTYPE)
    if scheme == "xavier_uniform":
        if rng is None:
            raise ValueError("xavier_uniform needs an rng")
        if fan is None:
            fan_out = shape[-1]
            fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
        else:
            fan_in, fan_out = fan
        a = xavier_bound(fan_in, fan_out)
        return np.ascontiguousarray(rng.uniform(-a, a, size=shape), dtype=DTYPE)
    raise ValueError(f"unknown init scheme {scheme!r}")


class ParamSet:
    """Ordered parameters with a parallel gradient map of identical shapes."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = as_tensor(value)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def set_grads(self, grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            if g.shape != self.params[name].shape:
                raise ShapeError(
                    f"gradient for {name!r} has shape {g.shape}, "
                    f"parameter has {self.params[name].shape}"
                )
            self.grads[name][...] = g

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, p in self.params.items():
            out.add(name, p.copy())
        return out

    def load(self, values: dict[str, np.ndarray]):
        """Overwrite parameter values in place (shapes must match)."""
        for name, p in self.params.items():
            v = np.asarray(values[name], dtype=DTYPE)
            if v.shape != p.shape:
                raise ShapeError(f"{name!r}: expected {p.shape}, got {v.shape}")
            p[...] = v


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one element at a time."""
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        fp = float(f(x))
        flat_x[i] = orig - eps
        fm = float(f(x))
        flat_x[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"non-finite function value at element {i}")
        flat_g[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, abs_floor: float = 1e-6) -> np.ndarray:
    """Element-wise |a - n| / max(|a|, |n|, abs_floor)."""
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_floor)
    return np.abs(a - n) / scale
