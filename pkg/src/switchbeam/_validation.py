"""Input validation helpers used by the estimators and the functional core."""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from .errors import InvalidInputError, ShapeMismatchError


def as_float_array(x: Any, name: str, ndim: int | None = None,
                   dtype: type = np.float64) -> np.ndarray:
    """Coerce ``x`` to a floating ndarray, optionally enforcing its rank."""
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeMismatchError(
            f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or infinite values")
    return arr


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise InvalidInputError(f"{name} must be > 0, got {value!r}")
    return value


def check_nonnegative(value: float, name: str) -> float:
    if value < 0:
        raise InvalidInputError(f"{name} must be >= 0, got {value!r}")
    return value


def check_odd(value: int, name: str) -> int:
    if value % 2 != 1:
        raise InvalidInputError(f"{name} must be odd, got {value}")
    return value


def check_in_range(value: float, name: str, low: float, high: float,
                   inclusive: bool = False) -> float:
    ok = low <= value <= high if inclusive else low < value < high
    if not ok:
        bracket = "[]" if inclusive else "()"
        raise InvalidInputError(
            f"{name} must lie in {bracket[0]}{low}, {high}{bracket[1]}, got {value!r}")
    return value


def check_shape(arr: np.ndarray, shape: Sequence[int], name: str) -> np.ndarray:
    if tuple(arr.shape) != tuple(shape):
        raise ShapeMismatchError(
            f"{name} must have shape {tuple(shape)}, got {tuple(arr.shape)}")
    return arr
