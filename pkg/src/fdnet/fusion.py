"""Bottom-up decoder with dense semantic filters.

Each shallower level is gated by a filter built from all deeper grafted
features (``filter * F + F``), concatenated with the upsampled decoded
feature from the level below it, and convolved. The coarse map is a single
logit channel at the finest level.
"""

from __future__ import annotations

from dataclasses import dataclass

from .grafting import GraftedPyramid
from .numcore import Tensor, nn, ops


@dataclass
class DecodedFeatures:
    F_hat: list[Tensor]
    coarse: Tensor
    filters: list[Tensor]

    def __post_init__(self):
        if self.coarse.shape[1] != 1:
            raise ValueError(f"coarse map must have 1 channel, got {self.coarse.shape[1]}")
        if self.coarse.shape[2:] != self.F_hat[0].shape[2:]:
            raise ValueError("coarse map must share the finest decoded resolution")


def _upsample_to(x: Tensor, size: int) -> Tensor:
    h = x.shape[2]
    if h == size:
        return x
    if size % h:
        raise ValueError(f"cannot upsample {h} to {size}: not an integer factor")
    factor = size // h
    if factor & (factor - 1):
        raise ValueError(f"resolution ratio {factor} is not a power of two")
    return ops.bilinear_resize(x, factor)


class SemanticFilter(nn.Module):
    """``Conv3(Conv1([deeper_1 up; ...; deeper_m up]))``."""

    def __init__(self, rng, n_inputs: int, width: int):
        self.n_inputs = n_inputs
        self.conv1 = nn.Conv2d(rng, n_inputs * width, width, 1)
        self.conv3 = nn.Conv2d(rng, width, width, 3)

    def upsampled(self, deeper: list[Tensor], target_spatial: int) -> list[Tensor]:
        if not deeper:
            raise ValueError("semantic_filter: needs at least one deeper feature")
        return [_upsample_to(t, target_spatial) for t in deeper]

    def __call__(self, deeper: list[Tensor], target_spatial: int) -> Tensor:
        if len(deeper) != self.n_inputs:
            raise ValueError(f"semantic_filter: expected {self.n_inputs} inputs, got {len(deeper)}")
        return self.conv3(self.conv1(ops.concat_channels(self.upsampled(deeper, target_spatial))))


class FuseLevel(nn.Module):
    def __init__(self, rng, width: int):
        self.conv = nn.Conv2d(rng, 2 * width, width, 3)

    @staticmethod
    def gate(F_i: Tensor, filter_i: Tensor) -> Tensor:
        return filter_i * F_i + F_i

    def __call__(self, F_i: Tensor, filter_i: Tensor, F_hat_next: Tensor) -> Tensor:
        if filter_i.shape != F_i.shape:
            raise ValueError(f"fuse_level: filter shape {filter_i.shape} != feature shape {F_i.shape}")
        if F_hat_next.shape != F_i.shape:
            raise ValueError(f"fuse_level: decoded shape {F_hat_next.shape} != feature shape {F_i.shape}")
        return self.conv(ops.concat_channels([self.gate(F_i, filter_i), F_hat_next]))


class FeatureFusion(nn.Module):
    def __init__(self, rng, width: int = 64):
        self.width = width
        self.top = nn.Conv2d(rng, width, width, 3)
        # filters for levels 3, 2, 1 consume 1, 2, 3 deeper features
        self.filters = [SemanticFilter(rng, n, width) for n in (1, 2, 3)]
        self.fuse = [FuseLevel(rng, width) for _ in range(3)]
        self.head = nn.Conv2d(rng, width, 1, 3)

    def __call__(self, gp: GraftedPyramid) -> DecodedFeatures:
        F1, F2, F3, F4 = gp.F
        hat4 = self.top(F4)
        filt3 = self.filters[0]([F4], F3.shape[2])
        hat3 = self.fuse[0](F3, filt3, ops.bilinear_resize(hat4, 2))
        filt2 = self.filters[1]([F4, F3], F2.shape[2])
        hat2 = self.fuse[1](F2, filt2, ops.bilinear_resize(hat3, 2))
        filt1 = self.filters[2]([F4, F3, F2], F1.shape[2])
        hat1 = self.fuse[2](F1, filt1, ops.bilinear_resize(hat2, 2))
        return DecodedFeatures([hat1, hat2, hat3, hat4], self.head(hat1), [filt1, filt2, filt3])


def semantic_filter(deeper: list[Tensor], target_spatial: int, module: SemanticFilter) -> Tensor:
    return module(deeper, target_spatial)


def fuse_level(F_i: Tensor, filter_i: Tensor, F_hat_next: Tensor, module: FuseLevel) -> Tensor:
    return module(F_i, filter_i, F_hat_next)


def decode(gp: GraftedPyramid, module: FeatureFusion) -> DecodedFeatures:
    return module(gp)
