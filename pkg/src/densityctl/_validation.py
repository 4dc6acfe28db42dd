"""Input checks shared by the estimators and the simulators."""

from __future__ import annotations

import numpy as np


def check_positions(X, grid, allow_empty: bool = False) -> np.ndarray:
    """Return positions as an ``(N, ndim)`` float array inside the domain."""
    X = np.asarray(X, dtype=float)
    if grid.ndim == 1 and X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != grid.ndim:
        raise ValueError(f"positions must have shape (N, {grid.ndim}), got {X.shape}")
    if X.shape[0] == 0 and not allow_empty:
        raise ValueError("position list is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError("positions contain non-finite values")
    a = grid.half_width
    if np.any(X < -a) or np.any(X > a):
        raise ValueError("positions must lie inside the domain [-a, a]^n")
    return X


def check_positive(name: str, value, strict: bool = True) -> float:
    value = float(value)
    ok = value > 0 if strict else value >= 0
    if not ok or not np.isfinite(value):
        raise ValueError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {value!r}")
    return value
