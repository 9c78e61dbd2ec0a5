"""Grafting of main-scale features into the sub-scale pyramid.

Pairs ``(g_i, f_{i+1})`` share a resolution. The two shallow pairs are merged
by an elementwise pooling across the branches; the deep pair uses cross
attention with queries and values from the sub-scale feature and keys from
the main-scale feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import FeaturePyramid
from .numcore import Tensor, nn, ops


@dataclass
class GraftedPyramid:
    F: list[Tensor]
    channels: int

    def __post_init__(self):
        if len(self.F) != 4:
            raise ValueError(f"grafted pyramid has 4 levels, got {len(self.F)}")
        for a, b in zip(self.F, self.F[1:]):
            if a.shape[2] != 2 * b.shape[2]:
                raise ValueError(f"grafted levels must halve spatially: {a.shape} -> {b.shape}")
        for t in self.F:
            if t.shape[1] != self.channels:
                raise ValueError(f"grafted level has {t.shape[1]} channels, expected {self.channels}")

    def __getitem__(self, i: int) -> Tensor:
        return self.F[i]


def _check_spatial(g: Tensor, f: Tensor, what: str) -> None:
    if g.shape[0] != f.shape[0]:
        raise ValueError(f"{what}: batch dimension differs ({g.shape[0]} vs {f.shape[0]})")
    if g.shape[2:] != f.shape[2:]:
        raise ValueError(f"{what}: spatial size differs ({g.shape[2:]} vs {f.shape[2:]})")


class PoolGraft(nn.Module):
    """Align both branches with 1×1 convs, pool them elementwise, then a 3×3 conv."""

    def __init__(self, rng, c_main: int, c_sub: int, width: int, kind: str = "max"):
        if kind not in ("max", "avg"):
            raise ValueError(f"pool graft kind must be 'max' or 'avg', got {kind!r}")
        self.kind = kind
        self.align_g = nn.Conv2d(rng, c_main, width, 1)
        self.align_f = nn.Conv2d(rng, c_sub, width, 1)
        self.conv = nn.Conv2d(rng, width, width, 3)

    def merged(self, g: Tensor, f: Tensor) -> Tensor:
        """Branch-pooled tensor before the output conv."""
        _check_spatial(g, f, "pool_graft")
        a, b = self.align_g(g), self.align_f(f)
        if self.kind == "max":
            return ops.maximum(a, b)
        return ops.scale(a + b, 0.5)

    def __call__(self, g: Tensor, f: Tensor) -> Tensor:
        return self.conv(self.merged(g, f))


class CrossAttentionGraft(nn.Module):
    """Single-head cross attention: Q, V from ``f4`` and K from ``g3``."""

    def __init__(self, rng, c_main: int, c_sub: int, width: int, key_dim: int = 64):
        self.key_dim = key_dim
        self.ln_f = nn.LayerNorm(c_sub)
        self.ln_g = nn.LayerNorm(c_main)
        self.w_q = nn.Linear(rng, c_sub, key_dim)
        self.w_v = nn.Linear(rng, c_sub, c_sub)
        self.w_k = nn.Linear(rng, c_main, key_dim)
        self.align = nn.Conv2d(rng, c_sub, width, 1)

    def attention(self, g3: Tensor, f4: Tensor) -> tuple[Tensor, Tensor]:
        """Return the (N, HW, HW) attention matrix and the (N, HW, C) value tokens."""
        _check_spatial(g3, f4, "cross_attention_graft")
        if self.w_q.weight.shape[1] != self.w_k.weight.shape[1]:
            raise ValueError("cross_attention_graft: query and key widths differ")
        tf = self.ln_f(ops.flatten_permute(f4))
        tg = self.ln_g(ops.flatten_permute(g3))
        q, v = self.w_q(tf), self.w_v(tf)
        k = self.w_k(tg)
        logits = ops.scale(ops.matmul(q, ops.transpose_last(k)), 1.0 / np.sqrt(self.key_dim))
        return ops.softmax_lastdim(logits), v

    def __call__(self, g3: Tensor, f4: Tensor) -> Tensor:
        attn, v = self.attention(g3, f4)
        h, w = f4.shape[2:]
        return self.align(ops.unflatten_permute(ops.matmul(attn, v), h, w))


class FeatureGrafting(nn.Module):
    def __init__(self, rng, channels: tuple[int, ...], width: int = 64, key_dim: int = 64,
                 pool_kind: str = "max"):
        c1, c2, c3, c4 = channels
        self.width = width
        self.align_f1 = nn.Conv2d(rng, c1, width, 1)
        self.graft2 = PoolGraft(rng, c1, c2, width, pool_kind)
        self.graft3 = PoolGraft(rng, c2, c3, width, pool_kind)
        self.graft4 = CrossAttentionGraft(rng, c3, c4, width, key_dim)

    def __call__(self, gp: FeaturePyramid, fp: FeaturePyramid) -> GraftedPyramid:
        g1, g2, g3 = gp.levels[:3]  # g4 is deliberately not consumed
        f1, f2, f3, f4 = fp.levels
        F = [
            self.align_f1(f1),
            self.graft2(g1, f2),
            self.graft3(g2, f3),
            self.graft4(g3, f4),
        ]
        return GraftedPyramid(F, self.width)


def pool_graft(g: Tensor, f: Tensor, module: PoolGraft) -> Tensor:
    return module(g, f)


def cross_attention_graft(g3: Tensor, f4: Tensor, module: CrossAttentionGraft) -> Tensor:
    return module(g3, f4)


def build_grafted_pyramid(gp: FeaturePyramid, fp: FeaturePyramid, module: FeatureGrafting) -> GraftedPyramid:
    return module(gp, fp)
