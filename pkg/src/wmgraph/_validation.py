"""Small input-validation helpers used across the package."""

import numbers

import numpy as np

from .exceptions import DomainError, ShapeError


def check_positive(value, name, allow_zero=False):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise DomainError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise DomainError(f"{name} must be {bound}, got {value!r}")
    return float(value)


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise DomainError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise DomainError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_dims(dims, ndim, name="dims"):
    dims = tuple(int(d) for d in dims)
    if len(dims) != ndim or any(d <= 0 for d in dims):
        raise ShapeError(f"{name} must be {ndim} positive integers, got {dims}")
    return dims


def check_voxel_size(voxel_size_mm):
    vs = tuple(float(v) for v in voxel_size_mm)
    if len(vs) != 3 or not all(np.isfinite(v) and v > 0 for v in vs):
        raise DomainError(f"voxel_size_mm must be 3 positive reals, got {vs}")
    return vs


def check_signal(f, n, name="f"):
    """Return ``f`` as a float64 array whose first axis has length ``n``.

    One-dimensional signals and (n, k) stacks of signals are both accepted.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim not in (1, 2) or f.shape[0] != n:
        raise ShapeError(f"{name} must have leading dimension {n}, got shape {f.shape}")
    return f
