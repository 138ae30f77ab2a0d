"""Minimal dense tensor arithmetic.

Tensors are plain float64, C-order numpy arrays; these wrappers add the
shape validation and typed errors the rest of the library relies on.  No
broadcasting beyond equal-shape binary ops.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError

_UNARY_OPS = {
    "neg": np.negative,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
    "sqrt": np.sqrt,
}

_BINARY_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
    "min": np.minimum,
}


def as_tensor(values) -> np.ndarray:
    """Coerce to a C-order float64 array."""
    return np.ascontiguousarray(values, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a 2-D [m x k] by a 2-D [k x n] tensor."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def elementwise(op: str, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Apply a tagged unary or binary op per element (binary requires equal shapes)."""
    a = as_tensor(a)
    if op in _UNARY_OPS:
        if b is not None:
            raise ParameterError(f"unary op '{op}' takes one operand")
        return _UNARY_OPS[op](a)
    if op in _BINARY_OPS:
        if b is None:
            raise ParameterError(f"binary op '{op}' needs two operands")
        b = as_tensor(b)
        if a.shape != b.shape:
            raise DimensionError(f"elementwise '{op}' shape mismatch: {a.shape} vs {b.shape}")
        return _BINARY_OPS[op](a, b)
    raise ParameterError(f"unknown elementwise op '{op}'")


def reduce(a: np.ndarray, kind: str, axis: int | None = None) -> np.ndarray:
    """Reduce along `axis` (None = all elements); argmax breaks ties toward the lowest index."""
    a = as_tensor(a)
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {a.shape}")
    if kind == "sum":
        return np.sum(a, axis=axis)
    if kind == "mean":
        return np.mean(a, axis=axis)
    if kind == "max":
        return np.max(a, axis=axis)
    if kind == "argmax":
        return np.argmax(a, axis=axis)
    raise ParameterError(f"unknown reduction '{kind}'")
