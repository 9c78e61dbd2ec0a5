"""Randomly initialised stand-in backbones with PVT and Res2Net pyramid geometry.

Both encoders emit four levels at strides 4, 8, 16 and 32 of their own input.
The sub-scale input is twice the main-scale size, so sub level ``i + 1`` lines
up spatially with main level ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import Tensor, nn, ops


@dataclass
class EncoderConfig:
    channels_per_level: tuple[int, int, int, int] = (8, 16, 32, 64)
    blocks_per_level: tuple[int, int, int, int] = (1, 1, 1, 1)
    main_input_size: int = 32
    sub_input_size: int | None = None

    def __post_init__(self):
        self.channels_per_level = tuple(int(c) for c in self.channels_per_level)
        self.blocks_per_level = tuple(int(b) for b in self.blocks_per_level)
        if len(self.channels_per_level) != 4 or len(self.blocks_per_level) != 4:
            raise ValueError("encoder config needs exactly 4 levels")
        if self.sub_input_size is None:
            self.sub_input_size = 2 * self.main_input_size
        if self.sub_input_size != 2 * self.main_input_size:
            raise ValueError(
                f"sub_input_size must be twice main_input_size ({self.sub_input_size} != 2*{self.main_input_size})"
            )
        if self.main_input_size % 32:
            raise ValueError(f"main_input_size must be divisible by 32, got {self.main_input_size}")


@dataclass
class FeaturePyramid:
    levels: list[Tensor]
    source: str
    strides: tuple[int, ...] = field(default=(4, 8, 16, 32))

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ValueError(f"a pyramid has 4 levels, got {len(self.levels)}")
        for a, b in zip(self.levels, self.levels[1:]):
            if a.shape[2] != 2 * b.shape[2] or a.shape[3] != 2 * b.shape[3]:
                raise ValueError(f"pyramid levels must halve spatially: {a.shape} -> {b.shape}")

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    @property
    def spatial_sizes(self) -> list[int]:
        return [t.shape[2] for t in self.levels]


def _check_image(image: Tensor, size: int, what: str) -> None:
    if image.ndim != 4 or image.shape[1] != 3:
        raise ValueError(f"{what}: expected N×3×S×S image, got shape {image.shape}")
    if image.shape[2] != image.shape[3]:
        raise ValueError(f"{what}: image must be square, got {image.shape[2]}x{image.shape[3]}")
    if image.shape[2] % 32:
        raise ValueError(f"{what}: spatial size {image.shape[2]} not divisible by 32")
    if image.shape[2] != size:
        raise ValueError(f"{what}: spatial size {image.shape[2]} does not match configured {size}")


class SelfAttentionBlock(nn.Module):
    """Pre-norm single-head self-attention followed by a token-wise linear map."""

    def __init__(self, rng, dim: int):
        self.dim = dim
        self.norm1 = nn.LayerNorm(dim)
        self.q = nn.Linear(rng, dim, dim)
        self.k = nn.Linear(rng, dim, dim)
        self.v = nn.Linear(rng, dim, dim)
        self.proj = nn.Linear(rng, dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Linear(rng, dim, dim)

    def __call__(self, tokens: Tensor) -> Tensor:
        t = self.norm1(tokens)
        q, k, v = self.q(t), self.k(t), self.v(t)
        logits = ops.scale(ops.matmul(q, ops.transpose_last(k)), 1.0 / np.sqrt(self.dim))
        attended = self.proj(ops.matmul(ops.softmax_lastdim(logits), v))
        tokens = tokens + attended
        return tokens + self.mlp(self.norm2(tokens))


class MainStage(nn.Module):
    def __init__(self, rng, c_in: int, c_out: int, first: bool, n_blocks: int):
        if first:
            self.embed = nn.Conv2d(rng, c_in, c_out, 7, stride=4, pad=3)
        else:
            self.embed = nn.Conv2d(rng, c_in, c_out, 3, stride=2, pad=1)
        self.norm = nn.LayerNorm(c_out)
        self.blocks = [SelfAttentionBlock(rng, c_out) for _ in range(n_blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        x = self.embed(x)
        h, w = x.shape[2:]
        tokens = self.norm(ops.flatten_permute(x))
        for block in self.blocks:
            tokens = block(tokens)
        return ops.unflatten_permute(tokens, h, w)


class MainEncoder(nn.Module):
    """Transformer-flavoured stand-in for the main-scale backbone."""

    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        widths = (3,) + cfg.channels_per_level
        self.stages = [
            MainStage(rng, widths[i], widths[i + 1], i == 0, cfg.blocks_per_level[i]) for i in range(4)
        ]

    def __call__(self, image: Tensor) -> FeaturePyramid:
        _check_image(image, self.cfg.main_input_size, "encode_main")
        levels, x = [], image
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(levels, "main")


class ResidualBlock(nn.Module):
    def __init__(self, rng, c: int):
        self.conv1 = nn.Conv2d(rng, c, c, 3, gain=np.sqrt(2.0))
        self.bn1 = nn.BatchNorm2d(c)
        self.conv2 = nn.Conv2d(rng, c, c, 3)
        self.bn2 = nn.BatchNorm2d(c)

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return ops.relu(x + y)


class SubStage(nn.Module):
    def __init__(self, rng, c_in: int, c_out: int, first: bool, n_blocks: int):
        self.first = first
        self.down = nn.Conv2d(rng, c_in, c_out, 3, stride=2, pad=1, gain=np.sqrt(2.0))
        self.bn = nn.BatchNorm2d(c_out)
        self.blocks = [ResidualBlock(rng, c_out) for _ in range(n_blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.relu(self.bn(self.down(x)))
        if self.first:
            x = ops.pool2d(x, "max", 2, 2)
        for block in self.blocks:
            x = block(x)
        return x


class SubEncoder(nn.Module):
    """Residual-CNN stand-in for the sub-scale backbone."""

    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        widths = (3,) + cfg.channels_per_level
        self.stages = [
            SubStage(rng, widths[i], widths[i + 1], i == 0, cfg.blocks_per_level[i]) for i in range(4)
        ]

    def __call__(self, image: Tensor) -> FeaturePyramid:
        _check_image(image, self.cfg.sub_input_size, "encode_sub")
        levels, x = [], image
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(levels, "sub")


def encode_main(image: Tensor, encoder: MainEncoder) -> FeaturePyramid:
    return encoder(image)


def encode_sub(image: Tensor, encoder: SubEncoder) -> FeaturePyramid:
    return encoder(image)
