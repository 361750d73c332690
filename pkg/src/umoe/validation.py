"""Small input-validation helpers used by the estimator-facing API."""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError


def as_float_matrix(x, name: str) -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array, raising :class:`InputError` on failure."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise InputError(f"{name} must be a 2-D array, got ndim={arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def as_float_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a 1-D array, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


def check_positive(value, name: str) -> None:
    if not (value > 0) or not math.isfinite(float(value)):
        raise InputError(f"{name} must be positive, got {value!r}")


def check_unit_interval(value, name: str, *, open_low: bool = False) -> None:
    low_ok = value > 0 if open_low else value >= 0
    if not (low_ok and value <= 1):
        bound = "(0, 1]" if open_low else "[0, 1]"
        raise InputError(f"{name} must lie in {bound}, got {value!r}")


def check_count(value, name: str, minimum: int = 1) -> None:
    if int(value) != value or value < minimum:
        raise InputError(f"{name} must be an integer >= {minimum}, got {value!r}")


def decimal_ceil(fraction: float, count: int) -> int:
    """Ceiling of ``fraction * count`` robust to float drift in the product.

    The product is rounded to nine decimals first so that decimal-intent
    fractions behave exactly (0.1 * 30 must give 3, 0.51 * 100 must give 51).
    """
    return int(math.ceil(round(fraction * count, 9)))


def decimal_floor(fraction: float, count: int) -> int:
    """Floor of ``fraction * count`` with the same decimal-intent guard."""
    return int(math.floor(round(fraction * count, 9)))
