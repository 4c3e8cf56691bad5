"""Input validation helpers and the package exception hierarchy.

Estimators and functions in this package validate eagerly and raise
:class:`ValidationError` for malformed inputs (bad shapes, non-finite
values, out-of-range options) and :class:`NumericalError` when a
computation fails numerically (singular solve, diverging loss). The CLI
maps these onto exit codes 1 and 2 respectively.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ValidationError",
    "NumericalError",
    "check_matrix",
    "check_vector",
    "check_positive",
    "check_option",
]


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class NumericalError(RuntimeError):
    """Raised when a numerical routine fails (non-finite values, singular system)."""


def check_matrix(X, name="X", n_cols=None, dtype=np.float64):
    """Coerce to a finite 2-d array, optionally enforcing the column count."""
    X = np.asarray(X, dtype=dtype)
    if X.ndim != 2:
        raise ValidationError(f"{name} must be 2-d, got shape {X.shape}")
    if n_cols is not None and X.shape[1] != n_cols:
        raise ValidationError(
            f"{name} must have {n_cols} columns, got {X.shape[1]}"
        )
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite values")
    return X


def check_vector(v, name="v", size=None, dtype=np.float64):
    """Coerce to a finite 1-d array, optionally enforcing the length."""
    v = np.asarray(v, dtype=dtype)
    if v.ndim != 1:
        raise ValidationError(f"{name} must be 1-d, got shape {v.shape}")
    if size is not None and v.shape[0] != size:
        raise ValidationError(f"{name} must have length {size}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite values")
    return v


def check_positive(x, name="value"):
    x = float(x)
    if not np.isfinite(x) or x <= 0.0:
        raise ValidationError(f"{name} must be positive and finite, got {x}")
    return x


def check_option(value, name, options):
    if value not in options:
        raise ValidationError(
            f"unknown {name} {value!r}, expected one of {sorted(options)}"
        )
    return value
