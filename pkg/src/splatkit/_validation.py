"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import SizeError, ValidationError


def as_float_array(x, shape=None, name="array", dtype=np.float64, copy=True):
    """Convert ``x`` to a finite float array, optionally checking its shape.

    ``shape`` entries of ``None`` match any length along that axis.
    """
    arr = np.array(x, dtype=dtype, copy=copy)
    if shape is not None:
        if arr.ndim != len(shape) or any(
            want is not None and got != want for got, want in zip(arr.shape, shape)
        ):
            want = tuple("*" if s is None else s for s in shape)
            raise ValidationError(f"{name} must have shape {want}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def as_points(x, name="points"):
    return as_float_array(x, shape=(None, 3), name=name)


def frozen(arr):
    arr.setflags(write=False)
    return arr


def check_scalar(x, name, min_val=None, max_val=None, include_min=True, include_max=True, integer=False):
    """Validate a scalar parameter, raising ``ValidationError`` on failure."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(x, bool) or not isinstance(x, kind):
        raise ValidationError(f"{name} must be {'an integer' if integer else 'a real number'}, got {x!r}")
    if not integer and not np.isfinite(x) and not (np.isinf(x) and max_val is None and x > 0):
        raise ValidationError(f"{name} must be finite, got {x!r}")
    if min_val is not None:
        if x < min_val or (not include_min and x == min_val):
            op = ">=" if include_min else ">"
            raise ValidationError(f"{name} must be {op} {min_val}, got {x!r}")
    if max_val is not None:
        if x > max_val or (not include_max and x == max_val):
            op = "<=" if include_max else "<"
            raise ValidationError(f"{name} must be {op} {max_val}, got {x!r}")
    return x


def check_min_length(seq, n, name):
    if len(seq) < n:
        raise SizeError(f"{name} needs at least {n} elements, got {len(seq)}")
