"""Training objective: structure loss on the refined map plus class-weighted
BCE on the two distractor maps.

Both losses are fused ops with closed-form gradients on the logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distractor import DistractorTargets, PredictionBundle, check_binary
from .numcore import Tensor, ops

LOG_FLOOR = 1e-12


def _as_nchw(gt: np.ndarray, shape: tuple, what: str) -> np.ndarray:
    gt = check_binary(gt, what)
    if gt.shape != shape:
        if gt.size == int(np.prod(shape)):
            gt = gt.reshape(shape)
        else:
            raise ValueError(f"{what}: ground truth shape {gt.shape} does not match prediction {shape}")
    return gt


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def boundary_weights(gt: np.ndarray, window: int = 15, amplify: float = 5.0) -> np.ndarray:
    """``1 + amplify * |avgpool(gt) - gt|`` with zero padding counted in the mean."""
    pooled = ops.pool2d(Tensor(gt), "avg", window, 1, window // 2).data
    return 1.0 + amplify * np.abs(pooled - gt)


def structure_loss(pred_logits: Tensor, gt: np.ndarray) -> Tensor:
    """Weighted BCE plus weighted IoU, averaged over the batch.

    ``pred_logits`` and ``gt`` are N×1×H×W.
    """
    gt = _as_nchw(gt, pred_logits.shape, "structure_loss")
    z = pred_logits.data
    w = boundary_weights(gt)
    axes = tuple(range(1, z.ndim))
    n = z.shape[0]

    bce = np.maximum(z, 0.0) - z * gt + np.log1p(np.exp(-np.abs(z)))
    wsum = w.sum(axis=axes, keepdims=True)
    wbce = (w * bce).sum(axis=axes) / wsum.reshape(-1)

    p = ops._sigmoid(z)
    inter = (w * p * gt).sum(axis=axes, keepdims=True) + 1.0
    union = (w * (p + gt - p * gt)).sum(axis=axes, keepdims=True) + 1.0
    wiou = 1.0 - (inter / union).reshape(-1)
    out = np.array((wbce + wiou).mean())

    def _bw(g):
        d_bce = w * (p - gt) / wsum
        d_iou_dp = -(w * gt * union - inter * w * (1.0 - gt)) / union**2
        return (g * (d_bce + d_iou_dp * p * (1.0 - p)) / n,)

    return Tensor._result(out, (pred_logits,), _bw)


def balanced_bce(pred_logits: Tensor, gt: np.ndarray, swap_weights: bool = False,
                 reduction: str = "sum") -> Tensor:
    """Class-weighted BCE over pixels.

    The positive term is weighted by the positive-pixel fraction and the
    negative term by the negative fraction; ``swap_weights`` gives the
    conventional inverse-frequency balance. Counts are taken per image.
    ``reduction='sum'`` sums over pixels, ``'mean'`` divides by the pixel
    count; either way images in a batch are averaged.
    """
    if pred_logits.size == 0:
        raise ValueError("balanced_bce: empty input")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"balanced_bce: unknown reduction {reduction!r}")
    gt = _as_nchw(gt, pred_logits.shape, "balanced_bce")
    z = pred_logits.data
    axes = tuple(range(1, z.ndim))
    n = z.shape[0]
    per_image = int(np.prod(z.shape[1:]))

    n_pos = gt.sum(axis=axes, keepdims=True)
    n_neg = per_image - n_pos
    w_pos, w_neg = n_pos / per_image, n_neg / per_image
    if swap_weights:
        w_pos, w_neg = w_neg, w_pos

    log_p = _log_sigmoid(z)
    log_q = _log_sigmoid(-z)
    clamp_p = log_p < np.log(LOG_FLOOR)
    clamp_q = log_q < np.log(LOG_FLOOR)
    log_p = np.maximum(log_p, np.log(LOG_FLOOR))
    log_q = np.maximum(log_q, np.log(LOG_FLOOR))
    terms = -(w_pos * gt * log_p + w_neg * (1.0 - gt) * log_q)
    norm = n * (per_image if reduction == "mean" else 1)
    out = np.array(terms.sum() / norm)

    def _bw(g):
        p = ops._sigmoid(z)
        d = -w_pos * gt * np.where(clamp_p, 0.0, 1.0 - p) + w_neg * (1.0 - gt) * np.where(clamp_q, 0.0, p)
        return (g * d / norm,)

    return Tensor._result(out, (pred_logits,), _bw)


@dataclass
class LossBreakdown:
    total: Tensor
    l_fp_map: float
    l_fn: float
    l_fp: float
    lam: float = 10.0
    beta: float = 10.0
    l_coarse: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "total": float(self.total.data),
            "l_fp_map": self.l_fp_map,
            "l_fn": self.l_fn,
            "l_fp": self.l_fp,
        }


def combine(l_fp_map: Tensor, l_fn: Tensor | None, l_fp: Tensor | None, lam: float = 10.0,
            beta: float = 10.0, l_coarse: Tensor | None = None) -> LossBreakdown:
    """``l_fp_map + lam * l_fn + beta * l_fp`` (+ optional coarse term)."""
    terms = [(1.0, l_fp_map)]
    if l_fn is not None:
        terms.append((lam, l_fn))
    if l_fp is not None:
        terms.append((beta, l_fp))
    if l_coarse is not None:
        terms.append((1.0, l_coarse))
    total = ops.add_scalars(terms)
    as_float = lambda t: 0.0 if t is None else float(t.data)  # noqa: E731
    return LossBreakdown(total, as_float(l_fp_map), as_float(l_fn), as_float(l_fp), lam, beta,
                         as_float(l_coarse))


def total_loss(bundle: PredictionBundle, targets: DistractorTargets | None, gt: np.ndarray,
               lam: float = 10.0, beta: float = 10.0, swap_balance_weights: bool = False,
               aux_coarse_loss: bool = False, distractor_reduction: str = "sum") -> LossBreakdown:
    l_map = structure_loss(bundle.refined, gt)
    l_fn = l_fp = None
    if bundle.fn_pred is not None and targets is not None:
        l_fn = balanced_bce(bundle.fn_pred, targets.fn_gt, swap_balance_weights, distractor_reduction)
        l_fp = balanced_bce(bundle.fp_pred, targets.fp_gt, swap_balance_weights, distractor_reduction)
    l_coarse = structure_loss(bundle.coarse, gt) if aux_coarse_loss else None
    return combine(l_map, l_fn, l_fp, lam, beta, l_coarse)
