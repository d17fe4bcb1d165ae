"""Input validation helpers for the estimator-facing API."""
from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError, ShapeError


def check_matrix(X, name: str = "X", n_cols: int = None) -> np.ndarray:
    """Coerce to a finite 2-D float64 array, optionally pinning the column count."""
    arr = np.ascontiguousarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise ShapeError(f"{name} must have {n_cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def check_labels(y, n_rows: int, name: str = "y") -> np.ndarray:
    """Coerce to a 1-D integer label array matching the sample count."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if len(arr) != n_rows:
        raise ContractError(f"{name} has {len(arr)} entries for {n_rows} samples")
    if not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise ContractError(f"{name} must hold integer class labels")
        arr = as_int
    return arr.astype(np.int64)
