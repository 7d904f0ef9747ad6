"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np


def check_images(X) -> np.ndarray:
    """Coerce (n,H,W) or (n,1,H,W) image stacks to float64 (n,1,H,W)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4 or X.shape[1] != 1:
        raise ValueError(f"expected images shaped (n,H,W) or (n,1,H,W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image stack")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    return X


def check_masks(y, n_samples: int, extents: tuple[int, int], n_classes: int | None = None) -> np.ndarray:
    """Validate (n,H,W) integer label masks against the image stack."""
    y = np.asarray(y)
    if y.shape != (n_samples,) + extents:
        raise ValueError(f"expected masks shaped {(n_samples,) + extents}, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.equal(np.mod(y, 1), 0).all():
            raise ValueError("masks must hold integer labels")
        y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError("mask labels must be non-negative")
    if n_classes is not None and y.max() >= n_classes:
        raise ValueError(f"mask labels reach {y.max()}, above n_classes={n_classes}")
    return y.astype(np.int64)


def check_labels(y, n_samples: int) -> np.ndarray:
    """Validate a (n,) integer label vector."""
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ValueError(f"expected labels shaped ({n_samples},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.equal(np.mod(y, 1), 0).all():
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError("labels must be non-negative")
    return y.astype(np.int64)
