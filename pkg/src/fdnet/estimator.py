"""scikit-learn style wrapper around the network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .metrics import s_measure
from .model import FDNet, ModelConfig
from .numcore import Tensor, no_grad, ops
from .training import LoopSettings, train_loop
from .validation import check_images, check_masks, downsample_masks, resize_images


class FDNetSegmenter(BaseEstimator):
    """Camouflaged-object segmenter with the usual ``fit`` / ``predict`` surface.

    ``X`` is a batch of square RGB images (N×H×W×3 uint8 or floats in [0, 1]),
    ``y`` the matching binary masks (N×H×W). Images are resized to
    ``main_size``; the sub-scale input is derived by 2× upsampling.
    ``predict_proba`` returns foreground probabilities at the input
    resolution.
    """

    def __init__(self, main_size=32, channels=(8, 16, 32, 64), blocks=(1, 1, 1, 1), width=64,
                 key_dim=64, lr=0.05, momentum=0.9, weight_decay=5e-4, epochs=1, batch=4,
                 lam=10.0, beta=10.0, seed=0, swap_balance_weights=False, aux_coarse_loss=False,
                 graft_pool_kind="max", use_dam=True, hflip=True, distractor_reduction="mean",
                 max_steps=None, grad_clip=1.0, shuffle=True, warm_start=False):
        self.main_size = main_size
        self.channels = channels
        self.blocks = blocks
        self.width = width
        self.key_dim = key_dim
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch = batch
        self.lam = lam
        self.beta = beta
        self.seed = seed
        self.swap_balance_weights = swap_balance_weights
        self.aux_coarse_loss = aux_coarse_loss
        self.graft_pool_kind = graft_pool_kind
        self.use_dam = use_dam
        self.hflip = hflip
        self.distractor_reduction = distractor_reduction
        self.max_steps = max_steps
        self.grad_clip = grad_clip
        self.shuffle = shuffle
        self.warm_start = warm_start

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.main_size, tuple(self.channels), tuple(self.blocks), self.width,
                           self.key_dim, self.graft_pool_kind, self.use_dam, self.seed)

    def _loop_settings(self) -> LoopSettings:
        return LoopSettings(self.lr, self.momentum, self.weight_decay, self.epochs, self.batch, self.lam,
                            self.beta, self.swap_balance_weights, self.aux_coarse_loss,
                            self.distractor_reduction, self.hflip, self.max_steps, self.grad_clip,
                            self.seed, self.shuffle)

    def _validate_hyperparameters(self) -> None:
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.main_size % 32:
            raise ValueError(f"main_size must be divisible by 32, got {self.main_size}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    def initialize(self) -> "FDNetSegmenter":
        """Build freshly initialised parameters without training."""
        self._validate_hyperparameters()
        self.model_ = FDNet(self.model_config())
        self.loss_log_ = []
        return self

    def prepare(self, X, y=None):
        """Convert raw inputs to network layout: main-scale images and output-resolution masks."""
        X = check_images(X)
        xs = resize_images(X, self.main_size)
        if y is None:
            return xs
        y = check_masks(y, n=X.shape[0], size=X.shape[2])
        return xs, downsample_masks(y, self.main_size // 2)

    def fit(self, X, y, callback=None):
        if not (self.warm_start and hasattr(self, "model_")):
            self.initialize()
        self._validate_hyperparameters()
        xs, ys = self.prepare(X, y)
        self.loss_log_ = train_loop(self.model_, xs, ys, self._loop_settings(), callback)
        self.n_steps_ = len(self.loss_log_)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Refined-map logits at the decoder resolution, N×h×w."""
        check_is_fitted(self, "model_")
        xs = self.prepare(X)
        out = []
        with no_grad():
            for start in range(0, xs.shape[0], max(self.batch, 1)):
                out.append(self.model_(Tensor(xs[start : start + self.batch])).refined.data[:, 0])
        return np.concatenate(out)

    def predict_proba(self, X) -> np.ndarray:
        X = check_images(X)
        logits = self.decision_function(X)
        prob = ops._sigmoid(logits)
        size = X.shape[2]
        if prob.shape[1] != size:
            prob = ops.resize(Tensor(prob[:, None]), (size, size)).data[:, 0]
        return np.clip(prob, 0.0, 1.0)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(np.uint8)

    def score(self, X, y) -> float:
        """Mean S-measure of the probability maps."""
        y = check_masks(y)
        prob = self.predict_proba(X)
        return float(np.mean([s_measure(p, g) for p, g in zip(prob, y)]))
