"""SGD with momentum and weight decay, linear learning-rate decay, and the
per-step training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .distractor import distractor_targets
from .losses import total_loss
from .model import FDNet
from .numcore import Tensor, backward

LOG_FIELDS = ("step", "total", "l_fp_map", "l_fn", "l_fp", "lr")


class NumericalError(RuntimeError):
    """Raised when the loss stops being finite."""


def linear_decay(lr0: float, step: int, total_steps: int) -> float:
    return lr0 * (1.0 - step / total_steps)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``; return the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


class SGD:
    """Heavy-ball SGD with coupled L2 decay (PyTorch ``torch.optim.SGD`` semantics)."""

    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9, weight_decay: float = 5e-4):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buf: list[np.ndarray | None] = [None] * len(self.params)

    def step(self, lr: float) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            d = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            if self.momentum:
                buf = self._buf[i]
                buf = d.copy() if buf is None else self.momentum * buf + d
                self._buf[i] = buf
                d = buf
            p.data = p.data - lr * d


@dataclass
class LoopSettings:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 1
    batch: int = 4
    lam: float = 10.0
    beta: float = 10.0
    swap_balance_weights: bool = False
    aux_coarse_loss: bool = False
    distractor_reduction: str = "mean"
    hflip: bool = True
    max_steps: int | None = None
    grad_clip: float | None = 1.0
    seed: int = 0
    shuffle: bool = True


def planned_steps(n_samples: int, s: LoopSettings) -> int:
    steps = s.epochs * math.ceil(n_samples / s.batch)
    return steps if s.max_steps is None else min(steps, s.max_steps)


def batches(n_samples: int, s: LoopSettings, rng: np.random.Generator):
    """Yield index arrays: a fresh permutation per epoch (or the natural order), cut into batches."""
    step, total = 0, planned_steps(n_samples, s)
    while step < total:
        order = rng.permutation(n_samples) if s.shuffle else np.arange(n_samples)
        for start in range(0, n_samples, s.batch):
            if step >= total:
                return
            yield order[start : start + s.batch]
            step += 1


def train_loop(model: FDNet, images: np.ndarray, masks: np.ndarray, s: LoopSettings,
               callback: Callable[[dict], None] | None = None) -> list[dict]:
    """Optimise ``model`` in place.

    ``images`` is N×3×S×S at the main scale and ``masks`` N×1×h×w binary at the
    decoder output resolution. Returns one log row per step.
    """
    n = images.shape[0]
    total = planned_steps(n, s)
    rng = np.random.default_rng(np.random.SeedSequence([s.seed, 1]))
    opt = SGD(model.parameters(), s.momentum, s.weight_decay)
    rows = []
    for step, idx in enumerate(batches(n, s, rng)):
        x, y = images[idx], masks[idx]
        if s.hflip:
            flip = rng.random(len(idx)) < 0.5
            x = np.where(flip[:, None, None, None], x[..., ::-1], x)
            y = np.where(flip[:, None, None, None], y[..., ::-1], y)
        lr = linear_decay(s.lr, step, total)
        bundle = model(Tensor(x))
        targets = distractor_targets(bundle.coarse, y) if bundle.fn_pred is not None else None
        losses = total_loss(bundle, targets, y, s.lam, s.beta, s.swap_balance_weights,
                            s.aux_coarse_loss, s.distractor_reduction)
        row = {"step": step, **losses.as_dict(), "lr": lr}
        if not math.isfinite(row["total"]):
            raise NumericalError(f"non-finite loss at step {step}")
        model.zero_grad()
        backward(losses.total)
        if s.grad_clip is not None:
            row["grad_norm"] = clip_grad_norm(opt.params, s.grad_clip)
        opt.step(lr)
        rows.append(row)
        if callback is not None:
            callback(row)
    return rows
