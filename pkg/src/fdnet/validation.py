"""Input checking and layout conversion for the estimator API."""

from __future__ import annotations

import numpy as np

from .numcore import Tensor, ops


def check_images(X, name: str = "X") -> np.ndarray:
    """Accept N×H×W×3 (uint8 or float in [0, 1]) or N×3×H×W floats; return N×3×H×W float64."""
    X = np.asarray(X)
    if X.ndim == 3 and X.shape[-1] == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"{name}: expected a batch of RGB images, got shape {X.shape}")
    if X.dtype == np.uint8:
        X = X.astype(np.float64) / 255.0
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] == 3 and X.shape[1] != 3:
        X = X.transpose(0, 3, 1, 2)
    if X.shape[1] != 3:
        raise ValueError(f"{name}: expected 3 colour channels, got shape {X.shape}")
    if X.shape[2] != X.shape[3]:
        raise ValueError(f"{name}: images must be square, got {X.shape[2]}x{X.shape[3]}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name}: contains NaN or Inf")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name}: float images must lie in [0, 1]")
    return np.ascontiguousarray(X)


def check_masks(y, n: int | None = None, size: int | None = None, name: str = "y") -> np.ndarray:
    """Accept N×H×W or N×1×H×W masks (bool, {0,1}, or uint8 thresholded at 127)."""
    y = np.asarray(y)
    if y.ndim == 4 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3:
        raise ValueError(f"{name}: expected N×H×W masks, got shape {y.shape}")
    if y.dtype == np.uint8 and y.max() > 1:
        y = y > 127
    y = y.astype(np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError(f"{name}: masks must be binary")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"{name}: {y.shape[0]} masks for {n} images")
    if size is not None and y.shape[1:] != (size, size):
        raise ValueError(f"{name}: mask size {y.shape[1:]} does not match image size {size}")
    return y


def resize_images(X: np.ndarray, size: int) -> np.ndarray:
    if X.shape[2] == size:
        return X
    return ops.resize(Tensor(X), (size, size)).data


def downsample_masks(y: np.ndarray, size: int) -> np.ndarray:
    """Area-average N×H×W masks to ``size`` and re-binarise at 0.5; returns N×1×size×size."""
    n, h, w = y.shape
    if h % size == 0 and w % size == 0:
        fh, fw = h // size, w // size
        avg = y.reshape(n, size, fh, size, fw).mean(axis=(2, 4))
    else:
        avg = ops.resize(Tensor(y[:, None]), (size, size)).data[:, 0]
    return (avg >= 0.5).astype(np.float64)[:, None]
