"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError


def as_feature_list(X, n_mels: int | None = None) -> list:
    """Coerce ``X`` into a list of float32 (T, B) feature matrices.

    Accepts a list/tuple of 2-d arrays with varying T, or a single 3-d
    array (n_clips, T, B). All clips must share the same number of bins.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ValueError("X must be a non-empty list of per-clip feature matrices")
    out = []
    for i, feat in enumerate(X):
        arr = np.asarray(feat, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"clip {i}: expected a 2-d (frames, bins) matrix, got shape {arr.shape}")
        if n_mels is None:
            n_mels = arr.shape[1]
        elif arr.shape[1] != n_mels:
            raise ValueError(f"clip {i}: has {arr.shape[1]} bins, expected {n_mels}")
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"clip {i}: feature matrix contains NaN or Inf")
        out.append(arr)
    return out


def as_label_matrix(y, n_clips: int, n_tags: int | None = None) -> np.ndarray:
    """Coerce ``y`` into an (n_clips, K) float32 matrix of {0, 1}."""
    arr = np.asarray(y)
    if arr.ndim != 2:
        raise ValueError(f"y must be 2-d (clips, tags), got shape {arr.shape}")
    if arr.shape[0] != n_clips:
        raise ValueError(f"y has {arr.shape[0]} rows but X has {n_clips} clips")
    if n_tags is not None and arr.shape[1] != n_tags:
        raise ValueError(f"y has {arr.shape[1]} tags, expected {n_tags}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("y entries must be binary 0/1")
    return arr.astype(np.float32)


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return arr
