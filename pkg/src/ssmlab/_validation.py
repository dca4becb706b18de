"""Input validation helpers shared by the engines and estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigError, DimensionError


def as_matrix(
    value,
    name: str,
    shape: tuple[int | None, int | None] | None = None,
    vector_as: str = "column",
) -> np.ndarray:
    """Convert ``value`` to a read-only, finite float64 matrix.

    Scalars become 1x1 matrices; 1-D input becomes a column (or a row when
    ``vector_as="row"``).
    """
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if vector_as == "column" else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None:
        for axis, expected in enumerate(shape):
            if expected is not None and arr.shape[axis] != expected:
                raise DimensionError(
                    f"{name} has shape {arr.shape}, expected axis {axis} of size {expected}"
                )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def as_vector(value, name: str, size: int | None = None) -> np.ndarray:
    arr = np.array(value, dtype=np.float64).reshape(-1)
    if size is not None and arr.size != size:
        raise DimensionError(f"{name} has length {arr.size}, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def check_sequence(x, d: int | None = None, name: str = "x") -> np.ndarray:
    """Return ``x`` as a time-major ``(T, d)`` float array.

    A 1-D input is read as a single-channel sequence.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must have shape (T, d), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must have T >= 1 and d >= 1, got {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise DimensionError(f"{name} has {arr.shape[1]} channels, layer expects {d}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_positive(value, name: str, *, integer: bool = False, allow_zero: bool = False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"{name} must be {'an integer' if integer else 'a real number'}, got {value!r}")
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return value


def check_random_state(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
