"""Small input-checking helpers used by the public functions and estimators."""

import math

import numpy as np

from .exceptions import ValidationError


def check_finite_scalar(value, name):
    try:
        value = float(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} must be a real number, got {value!r}") from exc
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value}")
    return value


def check_positive(value, name, allow_inf=False):
    value = float(value)
    if math.isnan(value) or value <= 0 or (math.isinf(value) and not allow_inf):
        raise ValidationError(f"{name} must be positive, got {value}")
    return value


def check_nonnegative(value, name):
    value = check_finite_scalar(value, name)
    if value < 0:
        raise ValidationError(f"{name} must be >= 0, got {value}")
    return value


def check_finite_array(arr, name, dtype=float):
    arr = np.asarray(arr, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def check_grid_shape(arr, grid, name):
    arr = np.asarray(arr)
    if arr.shape != grid.shape:
        raise ValidationError(
            f"{name} has shape {arr.shape}, expected grid shape {grid.shape}"
        )
    return arr
