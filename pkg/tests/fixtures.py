"""Deterministic small inputs shared by several test modules."""

from __future__ import annotations

import numpy as np


def pair16() -> tuple[np.ndarray, np.ndarray]:
    """16×16 gray prediction and an off-centre elliptical mask."""
    yy, xx = np.mgrid[0:16, 0:16]
    gt = (((yy - 6.3) / 4.5) ** 2 + ((xx - 9.1) / 3.2) ** 2 <= 1.0).astype(np.float64)
    rng = np.random.default_rng(2024)
    pred = np.clip(0.5 * gt + 0.5 * rng.random((16, 16)), 0.0, 1.0)
    return pred, gt


def pair8() -> tuple[np.ndarray, np.ndarray]:
    gt = np.zeros((8, 8))
    gt[2:5, 3:7] = 1.0
    gt[6, 1] = 1.0
    rng = np.random.default_rng(88)
    pred = np.round(rng.random((8, 8)), 3)
    return pred, gt


def random_pair(rng: np.random.Generator, size: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Prediction in [0, 1] and a non-degenerate binary mask."""
    while True:
        gt = (rng.random((size, size)) < rng.uniform(0.2, 0.6)).astype(np.float64)
        if 0 < gt.sum() < gt.size:
            return rng.random((size, size)), gt
