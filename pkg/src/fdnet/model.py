"""Full two-stage network: parallel encoders, grafting, fusion decoder and
distractor-aware refinement."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .distractor import DistractorAware, PredictionBundle
from .encoders import EncoderConfig, FeaturePyramid, MainEncoder, SubEncoder
from .fusion import DecodedFeatures, FeatureFusion
from .grafting import FeatureGrafting, GraftedPyramid
from .numcore import Tensor, nn, ops


@dataclass
class ModelConfig:
    main_size: int = 32
    channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    blocks: tuple[int, int, int, int] = (1, 1, 1, 1)
    width: int = 64
    key_dim: int = 64
    graft_pool_kind: str = "max"
    use_dam: bool = True
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.blocks = tuple(int(b) for b in self.blocks)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.channels, self.blocks, self.main_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["blocks"] = list(self.blocks)
        return d


@dataclass
class ForwardTrace:
    """Intermediate results of one forward pass, kept for inspection and tests."""

    main: FeaturePyramid
    sub: FeaturePyramid
    grafted: GraftedPyramid
    decoded: DecodedFeatures
    bundle: PredictionBundle = field(repr=False)


class FDNet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        ecfg = cfg.encoder_config()
        # independent streams per component so toggling one leaves the others' init unchanged
        streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(5)]
        self.main_encoder = MainEncoder(streams[0], ecfg)
        self.sub_encoder = SubEncoder(streams[1], ecfg)
        self.grafting = FeatureGrafting(streams[2], cfg.channels, cfg.width, cfg.key_dim, cfg.graft_pool_kind)
        self.fusion = FeatureFusion(streams[3], cfg.width)
        self.dam = DistractorAware(streams[4], cfg.width) if cfg.use_dam else None

    @property
    def output_size(self) -> int:
        return self.cfg.main_size // 2

    def trace(self, image: Tensor) -> ForwardTrace:
        sub_image = ops.bilinear_resize(image, 2)
        gp = self.main_encoder(image)
        fp = self.sub_encoder(sub_image)
        grafted = self.grafting(gp, fp)
        decoded = self.fusion(grafted)
        if self.dam is not None:
            bundle = self.dam(decoded.F_hat[0], decoded.coarse)
        else:
            bundle = PredictionBundle(decoded.coarse, decoded.coarse)
        return ForwardTrace(gp, fp, grafted, decoded, bundle)

    def __call__(self, image: Tensor) -> PredictionBundle:
        return self.trace(image).bundle
