"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

__all__ = ["check_point_cloud", "check_cloud_batch"]


def check_point_cloud(X, min_points: int = 1, unit: bool = False, name: str = "X") -> np.ndarray:
    """Validate one cloud and return it as a float64 ``(N, 3)`` array.

    ``unit=True`` additionally requires every coordinate in ``[0, 1]``.
    """
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=min_points,
                    input_name=name)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns (x, y, z), got {X.shape[1]}")
    if unit and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError(f"{name} must lie in the unit cube [0, 1]^3")
    return X


def check_cloud_batch(X, n_points: int | None = None, name: str = "X") -> np.ndarray:
    """Validate a stack of equally sized clouds, returning ``(S, N, 3)`` float64.

    A single ``(N, 3)`` cloud is promoted to a batch of one.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != 3 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"{name} must have shape (S, N, 3), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite coordinates")
    if n_points is not None and X.shape[1] != n_points:
        raise ValueError(f"{name} clouds have {X.shape[1]} points, expected {n_points}")
    return X
