"""Input validation helpers used at public API boundaries."""

from __future__ import annotations

import numpy as np


def check_vector(x, name: str, n: int | None = None, allow_nan: bool = False) -> np.ndarray:
    """Coerce ``x`` to a 1-d float64 array and validate it."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {arr.shape[0]}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_matrix(x, name: str, n_rows: int | None = None, allow_nan: bool = False) -> np.ndarray:
    """Coerce ``x`` to a 2-d float64 array and validate it."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if n_rows is not None and arr.shape[0] != n_rows:
        raise ValueError(f"{name} must have {n_rows} rows, got {arr.shape[0]}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_probability(p: float, name: str) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"{name} must lie strictly inside (0, 1), got {p}")
    return p


def check_positive_int(k, name: str, minimum: int = 1) -> int:
    k = int(k)
    if k < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {k}")
    return k
