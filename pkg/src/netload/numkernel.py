"""Dense float64 matrix helpers and a central-difference gradient oracle.

Matrices are plain 2-D ``numpy.ndarray`` objects in C (row-major) order.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when array shapes are incompatible for an operation."""


def as_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a contiguous 2-D float64 array.

    Scalars become 1x1 and 1-D arrays become a single row.
    """
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 0:
        return m.reshape(1, 1)
    if m.ndim == 1:
        return m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x):
    # expit branches on the sign internally, so exp never overflows
    return expit(x)


def sigmoid_derivative(x):
    s = expit(x)
    return s * (1.0 - s)


def tanh_derivative(x):
    t = np.tanh(x)
    return 1.0 - t * t


_ELEMENTWISE: dict[str, Callable] = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "sigmoid_derivative": sigmoid_derivative,
    "tanh_derivative": tanh_derivative,
}


def map_elementwise(m, f: str) -> np.ndarray:
    """Apply a named scalar function to every entry of ``m``.

    ``f`` is one of ``sigmoid``, ``tanh``, ``sigmoid_derivative`` and
    ``tanh_derivative``. Derivatives are taken with respect to the entry
    itself (the pre-activation), not the activated value.
    """
    try:
        fn = _ELEMENTWISE[f.replace("-", "_")]
    except KeyError:
        raise ValueError(f"unknown elementwise function {f!r}; "
                         f"choose from {sorted(_ELEMENTWISE)}") from None
    return fn(np.asarray(m, dtype=np.float64))


def finite_difference_grad(loss_fn: Callable[[np.ndarray], float],
                           params: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` with respect to ``params``.

    ``params`` is perturbed in place one entry at a time and restored before
    returning, so closures that read the array directly see each perturbation.

    Args:
        loss_fn: called as ``loss_fn(params)``; must return a scalar.
        params: float64 array of any shape.
        eps: step size.

    Returns:
        Array shaped like ``params``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if params.dtype != np.float64:
        raise TypeError("params must be a float64 array")
    grad = np.zeros_like(params)
    flat = params.reshape(-1)
    if not np.shares_memory(flat, params):
        raise ValueError("params must be contiguous so it can be perturbed in place")
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(loss_fn(params))
        flat[i] = orig - eps
        down = float(loss_fn(params))
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """Entrywise ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
