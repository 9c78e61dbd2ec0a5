"""Foreground-map evaluation: MAE, S-measure, E-measure and weighted F-measure.

Predictions are gray maps in [0, 1] consumed as-is; ground truths are
binary. Constants follow the measures' published defaults (alpha 0.5 for
S-measure, adaptive threshold ``min(2 * mean, 1)`` for E-measure, a 7×7
Gaussian with sigma 5 and distance decay 5 for the weighted F-measure).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

EPS = np.spacing(1.0)


def _check_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"pred and gt must be equal-shaped 2-D maps, got {pred.shape} and {gt.shape}")
    if pred.size == 0:
        raise ValueError("empty map")
    if pred.min() < 0.0 or pred.max() > 1.0 or not np.all(np.isfinite(pred)):
        raise ValueError("prediction values must lie in [0, 1]")
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ValueError("ground truth must be binary")
    return pred, gt


def mae(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float(np.mean(np.abs(pred - gt)))


# ---------------------------------------------------------------- S-measure


def _s_object(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _object_score(pred: np.ndarray, gt: np.ndarray) -> float:
    fg_mask = gt == 1
    u = fg_mask.mean()
    fg = _s_object((pred * gt)[fg_mask])
    bg = _s_object(((1.0 - pred) * (1.0 - gt))[~fg_mask])
    return u * fg + (1.0 - u) * bg


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = pred.mean(), gt.mean()
    denom = max(n - 1, 1)
    sx = ((pred - x) ** 2).sum() / denom
    sy = ((gt - y) ** 2).sum() / denom
    sxy = ((pred - x) * (gt - y)).sum() / denom
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)), int(np.round(h / 2))
    rows, cols = np.nonzero(gt)
    return int(np.round(cols.mean())) + 1, int(np.round(rows.mean())) + 1


def _region_score(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    x, y = _centroid(gt)
    area = h * w
    blocks = [
        (slice(0, y), slice(0, x), x * y / area),
        (slice(0, y), slice(x, w), (w - x) * y / area),
        (slice(y, h), slice(0, x), x * (h - y) / area),
    ]
    blocks.append((slice(y, h), slice(x, w), 1.0 - sum(b[2] for b in blocks)))
    return sum(weight * _ssim(pred[r, c], gt[r, c]) for r, c, weight in blocks)


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: object-aware and region-aware similarity."""
    pred, gt = _check_pair(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _object_score(pred, gt) + (1.0 - alpha) * _region_score(pred, gt)
    return float(max(score, 0.0))


# ---------------------------------------------------------------- E-measure


def _enhanced_alignment(binary: np.ndarray, gt: np.ndarray) -> float:
    n = gt.size
    if gt.sum() == 0:
        return float((binary == 0).sum() / n)
    if gt.sum() == n:
        return float(binary.sum() / n)
    dp = binary - binary.mean()
    dg = gt - gt.mean()
    align = 2.0 * dp * dg / (dp * dp + dg * dg + EPS)
    return float((((align + 1.0) ** 2) / 4.0).mean())


def _binarize(pred: np.ndarray, threshold: float) -> np.ndarray:
    # a zero threshold would mark every pixel as foreground; treat it as strict
    hit = pred >= threshold if threshold > 0 else pred > 0
    return hit.astype(np.float64)


def e_measure(pred, gt, mode: str = "adaptive") -> float:
    """Enhanced-alignment measure.

    ``mode`` is ``'adaptive'`` (threshold ``min(2 * mean(pred), 1)``),
    ``'mean'`` or ``'max'`` over the 256 thresholds ``k / 255``.
    """
    pred, gt = _check_pair(pred, gt)
    if mode == "adaptive":
        return _enhanced_alignment(_binarize(pred, min(2.0 * pred.mean(), 1.0)), gt)
    if mode not in ("mean", "max"):
        raise ValueError(f"unknown E-measure mode {mode!r}")
    curve = np.array([_enhanced_alignment(_binarize(pred, t), gt) for t in np.linspace(0, 1, 256)])
    return float(curve.mean() if mode == "mean" else curve.max())


# ---------------------------------------------------------------- weighted F-measure


def nearest_foreground(gt: np.ndarray, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean distance and flat index of the nearest foreground pixel.

    Ties resolve to the lowest row-major index. Brute force over foreground
    pixels, chunked to bound memory.
    """
    h, w = gt.shape
    fg = np.flatnonzero(gt.reshape(-1) == 1)
    if fg.size == 0:
        raise ValueError("no foreground pixels")
    fr, fc = np.divmod(fg, w)
    rows, cols = np.divmod(np.arange(h * w), w)
    dist2 = np.empty(h * w)
    idx = np.empty(h * w, dtype=np.int64)
    for start in range(0, h * w, chunk):
        sl = slice(start, start + chunk)
        d2 = (rows[sl, None] - fr[None, :]) ** 2 + (cols[sl, None] - fc[None, :]) ** 2
        best = d2.argmin(axis=1)
        idx[sl] = fg[best]
        dist2[sl] = d2[np.arange(d2.shape[0]), best]
    return np.sqrt(dist2).reshape(h, w), idx.reshape(h, w)


def gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    """Normalised 2-D Gaussian, matching MATLAB ``fspecial('gaussian')``."""
    r = (size - 1) / 2.0
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    k = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    k[k < np.finfo(float).eps * k.max()] = 0
    return k / k.sum()


def weighted_fbeta(pred, gt, beta2: float = 1.0, return_degenerate: bool = False):
    """Weighted F-measure with pixel dependency and importance weighting.

    An empty ground truth makes the measure undefined; 0.0 is returned and,
    with ``return_degenerate=True``, the flag is returned alongside.
    """
    pred, gt = _check_pair(pred, gt)
    fg = gt == 1
    if not fg.any():
        log.debug("weighted_fbeta: empty ground truth, returning 0")
        return (0.0, True) if return_degenerate else 0.0

    dist, nearest = nearest_foreground(gt)
    err = np.abs(pred - gt)
    err_t = err.reshape(-1)[nearest]  # background pixels take their nearest foreground error
    err_t = np.where(fg, err, err_t)
    ea = ndimage.correlate(err_t, gaussian_kernel(), mode="constant", cval=0.0)
    min_e = np.where(fg & (ea < err), ea, err)
    importance = np.where(fg, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_e * importance

    tp = fg.sum() - ew[fg].sum()
    fp = ew[~fg].sum()
    recall = 1.0 - ew[fg].mean()
    precision = tp / (tp + fp + EPS)
    q = (1.0 + beta2) * recall * precision / (recall + beta2 * precision + EPS)
    return (float(q), False) if return_degenerate else float(q)


# ---------------------------------------------------------------- aggregation


@dataclass
class ImageScores:
    id: str
    mae: float
    s_measure: float
    e_measure: float
    wfm: float
    degenerate: bool = False


@dataclass
class MetricReport:
    per_image: list[ImageScores]
    means: tuple[float, float, float, float] = field(default=(0.0, 0.0, 0.0, 0.0))
    count: int = 0

    def as_dict(self) -> dict[str, float]:
        return dict(zip(("mae", "s_measure", "e_measure", "wfm"), self.means))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "mae", "smeasure", "emeasure", "wfm"])
            for r in self.per_image:
                writer.writerow([r.id, repr(r.mae), repr(r.s_measure), repr(r.e_measure), repr(r.wfm)])
            writer.writerow(["MEAN"] + [repr(float(m)) for m in self.means])


def score_pair(pred, gt, image_id: str = "", e_mode: str = "adaptive") -> ImageScores:
    wfm, degenerate = weighted_fbeta(pred, gt, return_degenerate=True)
    return ImageScores(image_id, mae(pred, gt), s_measure(pred, gt), e_measure(pred, gt, e_mode), wfm, degenerate)


def evaluate_dataset(pairs: Iterable[tuple], e_mode: str = "adaptive") -> MetricReport:
    """Score ``(pred, gt)`` or ``(id, pred, gt)`` pairs; rows are sorted by id."""
    rows = []
    for i, item in enumerate(pairs):
        if len(item) == 3:
            image_id, pred, gt = item
        else:
            (pred, gt), image_id = item, f"{i:06d}"
        rows.append(score_pair(pred, gt, str(image_id), e_mode))
    if not rows:
        raise ValueError("evaluate_dataset: no image pairs")
    rows.sort(key=lambda r: r.id)
    table = np.array([[r.mae, r.s_measure, r.e_measure, r.wfm] for r in rows])
    return MetricReport(rows, tuple(float(v) for v in table.mean(axis=0)), len(rows))


class MetricSuite:
    """Streaming accumulator in the style of the usual SOD metric toolkits."""

    def __init__(self, e_mode: str = "adaptive"):
        self.e_mode = e_mode
        self._rows: list[ImageScores] = []

    def step(self, pred, gt, image_id: str | None = None) -> ImageScores:
        image_id = f"{len(self._rows):06d}" if image_id is None else image_id
        row = score_pair(pred, gt, image_id, self.e_mode)
        self._rows.append(row)
        return row

    def get_results(self) -> MetricReport:
        if not self._rows:
            raise ValueError("no images scored yet")
        rows = sorted(self._rows, key=lambda r: r.id)
        table = np.array([[r.mae, r.s_measure, r.e_measure, r.wfm] for r in rows])
        return MetricReport(rows, tuple(float(v) for v in table.mean(axis=0)), len(rows))
