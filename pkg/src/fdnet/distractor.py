"""Distractor-aware refinement of the coarse prediction.

Two lightweight encoders read the finest decoded feature. The false-negative
branch drives a spatial gate that amplifies the feature; the false-positive
branch feeds a refine unit whose output is subtracted before the final head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Tensor, nn, no_grad, ops


@dataclass
class PredictionBundle:
    coarse: Tensor
    refined: Tensor
    fn_pred: Tensor | None = None
    fp_pred: Tensor | None = None

    def __post_init__(self):
        for t in (self.refined, self.fn_pred, self.fp_pred):
            if t is not None and t.shape != self.coarse.shape:
                raise ValueError(f"prediction maps must share shape {self.coarse.shape}, got {t.shape}")


@dataclass
class DistractorTargets:
    fn_gt: np.ndarray
    fp_gt: np.ndarray


def check_binary(gt: np.ndarray, what: str) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64)
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ValueError(f"{what}: ground truth must be binary (0/1)")
    return gt


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(prob) >= threshold).astype(np.float64)


def distractor_targets(coarse_logits: Tensor | np.ndarray, gt: np.ndarray) -> DistractorTargets:
    """False-negative and false-positive masks of the binarised coarse map.

    Targets are data: no gradient flows back into the coarse logits.
    """
    logits = coarse_logits.data if isinstance(coarse_logits, Tensor) else np.asarray(coarse_logits, float)
    gt = check_binary(gt, "distractor_targets")
    if gt.shape != logits.shape:
        raise ValueError(f"distractor_targets: shape {gt.shape} != coarse shape {logits.shape}")
    with no_grad():
        b = binarize(ops._sigmoid(logits))
    return DistractorTargets(np.maximum(gt - b, 0.0), np.maximum(b - gt, 0.0))


class SmallEncoder(nn.Module):
    """conv3 → BN → ReLU → conv3 → BN → ReLU at constant width."""

    def __init__(self, rng, width: int = 64):
        self.width = width
        self.conv1 = nn.Conv2d(rng, width, width, 3, gain=np.sqrt(2.0))
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(rng, width, width, 3, gain=np.sqrt(2.0))
        self.bn2 = nn.BatchNorm2d(width)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.width:
            raise ValueError(f"small_encoder: expected {self.width} input channels, got shape {x.shape}")
        x = ops.relu(self.bn1(self.conv1(x)))
        return ops.relu(self.bn2(self.conv2(x)))


class DistractorAware(nn.Module):
    def __init__(self, rng, width: int = 64):
        self.width = width
        self.fn_encoder = SmallEncoder(rng, width)
        self.fn_head = nn.Conv2d(rng, width, 1, 1)
        self.fn_gate = nn.Conv2d(rng, 2 * width, 1, 1)
        self.fp_encoder = SmallEncoder(rng, width)
        self.fp_head = nn.Conv2d(rng, width, 1, 1)
        self.refine1 = nn.Conv2d(rng, 2 * width, width, 3, gain=np.sqrt(2.0))
        self.refine2 = nn.Conv2d(rng, width, width, 3)
        self.head = nn.Conv2d(rng, width, 1, 3)

    def fn_branch(self, F_hat1: Tensor) -> tuple[Tensor, Tensor]:
        xi_fn = self.fn_encoder(F_hat1)
        return xi_fn, self.fn_head(xi_fn)

    def fn_weights(self, F_hat1: Tensor, xi_fn: Tensor) -> Tensor:
        return ops.sigmoid(self.fn_gate(ops.concat_channels([F_hat1, xi_fn])))

    def fn_attention(self, F_hat1: Tensor, xi_fn: Tensor, weights: Tensor | None = None) -> Tensor:
        """``a * F_hat1 + F_hat1`` with a single-channel gate broadcast over channels.

        ``weights`` overrides the learned gate (used to probe the residual path).
        """
        if xi_fn.shape != F_hat1.shape:
            raise ValueError(f"fn_attention: xi_fn shape {xi_fn.shape} != feature shape {F_hat1.shape}")
        a = self.fn_weights(F_hat1, xi_fn) if weights is None else weights
        return ops.expand_channels(a, F_hat1.shape[1]) * F_hat1 + F_hat1

    def refine_feature(self, F_fn: Tensor, xi_fp: Tensor) -> Tensor:
        return self.refine2(ops.relu(self.refine1(ops.concat_channels([F_fn, xi_fp]))))

    def fp_branch_and_refine(self, F_hat1: Tensor, F_fn: Tensor) -> tuple[Tensor, Tensor]:
        xi_fp = self.fp_encoder(F_hat1)
        fp_pred = self.fp_head(xi_fp)
        feature = F_fn - self.refine_feature(F_fn, xi_fp)
        return fp_pred, self.head(feature)

    def __call__(self, F_hat1: Tensor, coarse: Tensor) -> PredictionBundle:
        xi_fn, fn_pred = self.fn_branch(F_hat1)
        F_fn = self.fn_attention(F_hat1, xi_fn)
        fp_pred, refined = self.fp_branch_and_refine(F_hat1, F_fn)
        return PredictionBundle(coarse, refined, fn_pred, fp_pred)


def small_encoder(x: Tensor, module: SmallEncoder) -> Tensor:
    return module(x)
