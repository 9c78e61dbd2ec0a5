"""Orchestration behind the command line: training runs, inference and
gradient-check sweeps."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import persistence
from .data import DatasetIndex, read_image, write_png
from .distractor import distractor_targets
from .estimator import FDNetSegmenter
from .losses import balanced_bce, structure_loss, total_loss
from .model import FDNet, ModelConfig
from .numcore import GradCheckReport, Tensor, finite_diff_check, nn, no_grad, ops
from .training import LOG_FIELDS

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.fdnk"
LOSS_LOG_NAME = "loss_log.csv"
FLAG_FIELDS = ("swap_balance_weights", "aux_coarse_loss", "graft_pool_kind", "use_dam", "hflip",
               "distractor_reduction", "grad_clip", "shuffle")


@dataclass
class TrainConfig:
    main_size: int = 32
    channels: list[int] = field(default_factory=lambda: [8, 16, 32, 64])
    blocks: list[int] = field(default_factory=lambda: [1, 1, 1, 1])
    width: int = 64
    key_dim: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 1
    batch: int = 4
    lam: float = 10.0
    beta: float = 10.0
    seed: int = 0
    max_steps: int | None = None
    swap_balance_weights: bool = False
    aux_coarse_loss: bool = False
    graft_pool_kind: str = "max"
    use_dam: bool = True
    hflip: bool = True
    distractor_reduction: str = "mean"
    grad_clip: float | None = 1.0
    shuffle: bool = True
    data: str = "data"
    split: str = "train"
    out: str = "runs/default"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.main_size <= 0 or self.main_size % 32:
            raise ValueError(f"main_size must be a positive multiple of 32, got {self.main_size}")
        if self.graft_pool_kind not in ("max", "avg"):
            raise ValueError(f"graft_pool_kind must be 'max' or 'avg', got {self.graft_pool_kind!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        """Build from a JSON document. ``lambda`` maps to ``lam``; a nested ``flags`` object is flattened."""
        raw = dict(raw)
        raw.update(raw.pop("flags", {}) or {})
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["flags"] = {k: d.pop(k) for k in FLAG_FIELDS}
        return d

    def estimator(self) -> FDNetSegmenter:
        return FDNetSegmenter(
            main_size=self.main_size, channels=tuple(self.channels), blocks=tuple(self.blocks),
            width=self.width, key_dim=self.key_dim, lr=self.lr, momentum=self.momentum,
            weight_decay=self.weight_decay, epochs=self.epochs, batch=self.batch, lam=self.lam,
            beta=self.beta, seed=self.seed, swap_balance_weights=self.swap_balance_weights,
            aux_coarse_loss=self.aux_coarse_loss, graft_pool_kind=self.graft_pool_kind,
            use_dam=self.use_dam, hflip=self.hflip, distractor_reduction=self.distractor_reduction,
            max_steps=self.max_steps, grad_clip=self.grad_clip, shuffle=self.shuffle,
        )


@dataclass
class TrainResult:
    checkpoint: Path
    loss_log: Path
    estimator: FDNetSegmenter


# ---------------------------------------------------------------- checkpoints


def config_path(ckpt: str | Path) -> Path:
    return Path(ckpt).with_suffix(".json")


def save_checkpoint(model: FDNet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    persistence.save(path, model.state_dict())
    config_path(path).write_text(json.dumps(model.cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> FDNet:
    cfg = ModelConfig(**json.loads(config_path(path).read_text()))
    model = FDNet(cfg)
    model.load_state_dict(persistence.load(path))
    return model


def estimator_from_checkpoint(path: str | Path, batch: int = 4) -> FDNetSegmenter:
    model = load_checkpoint(path)
    c = model.cfg
    est = FDNetSegmenter(main_size=c.main_size, channels=c.channels, blocks=c.blocks, width=c.width,
                         key_dim=c.key_dim, graft_pool_kind=c.graft_pool_kind, use_dam=c.use_dam,
                         seed=c.seed, batch=batch)
    est.model_ = model
    est.loss_log_ = []
    return est


def write_loss_log(rows: Iterable[dict], path: str | Path) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for r in rows:
            writer.writerow([r["step"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])
    return Path(path)


# ---------------------------------------------------------------- train / infer


def train(cfg: TrainConfig, data: DatasetIndex | None = None,
          callback: Callable[[dict], None] | None = None) -> TrainResult:
    data = data or DatasetIndex.load(cfg.data)
    data.validate()
    _, images, masks = data.load_arrays(cfg.split)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    est = cfg.estimator().fit(images, masks, callback=callback)
    ckpt = save_checkpoint(est.model_, out / CHECKPOINT_NAME)
    log_path = write_loss_log(est.loss_log_, out / LOSS_LOG_NAME)
    return TrainResult(ckpt, log_path, est)


def list_images(source: str | Path | Iterable) -> list[Path]:
    if isinstance(source, (str, Path)):
        p = Path(source)
        if p.is_dir():
            return sorted(q for q in p.iterdir() if q.suffix.lower() == ".png")
        return [p]
    return [Path(q) for q in source]


def infer(ckpt: str | Path, images: str | Path | Iterable, out: str | Path, batch: int = 4) -> list[Path]:
    """Write ``sigmoid(F_p)`` maps as 8-bit PNGs named after their inputs."""
    est = estimator_from_checkpoint(ckpt, batch)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in list_images(images):
        prob = est.predict_proba(read_image(path)[None])[0]
        target = out / (path.stem + ".png")
        write_png(target, prob)
        written.append(target)
    return written


# ---------------------------------------------------------------- gradient checks

OP_NAMES = (
    "conv2d", "conv2d_stride2", "pool2d_max", "pool2d_avg", "bilinear_resize", "linear", "matmul",
    "softmax_lastdim", "layer_norm", "batch_norm_infer", "relu", "sigmoid", "concat_channels",
    "eltwise_add", "eltwise_sub", "eltwise_mul", "eltwise_max", "expand_channels", "flatten_permute",
    "unflatten_permute", "scale", "transpose_last", "resize", "tsum", "tmean", "add_scalars",
    "structure_loss", "balanced_bce",
)


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def _op_case(name: str, rng: np.random.Generator):
    """Return ``(f, inputs)`` for one primitive."""
    p = lambda *s, scale=1.0: _param(rng, *s, scale=scale)  # noqa: E731
    if name == "conv2d":
        x, w, b = p(2, 3, 5, 5), p(4, 3, 3, 3), p(4)
        return lambda: ops.conv2d(x, w, b, 1, 1), [x, w, b]
    if name == "conv2d_stride2":
        x, w, b = p(1, 2, 6, 6), p(3, 2, 3, 3), p(3)
        return lambda: ops.conv2d(x, w, b, 2, 1), [x, w, b]
    if name == "pool2d_max":
        x = p(1, 2, 6, 6)
        return lambda: ops.pool2d(x, "max", 2, 2), [x]
    if name == "pool2d_avg":
        x = p(1, 2, 6, 6)
        return lambda: ops.pool2d(x, "avg", 3, 1, 1), [x]
    if name == "bilinear_resize":
        x = p(1, 2, 3, 3)
        return lambda: ops.bilinear_resize(x, 2), [x]
    if name == "linear":
        x, w, b = p(2, 3, 4), p(4, 5), p(5)
        return lambda: ops.linear(x, w, b), [x, w, b]
    if name == "matmul":
        a, b = p(2, 3, 4), p(2, 4, 3)
        return lambda: ops.matmul(a, b), [a, b]
    if name == "softmax_lastdim":
        x = p(3, 5)
        return lambda: ops.softmax_lastdim(x), [x]
    if name == "layer_norm":
        x, g, b = p(3, 6), p(6), p(6)
        return lambda: ops.layer_norm(x, g, b, 1e-5), [x, g, b]
    if name == "batch_norm_infer":
        x, g, b = p(2, 3, 4, 4), p(3), p(3)
        mean, var = Tensor(rng.standard_normal(3)), Tensor(rng.uniform(0.5, 2.0, 3))
        return lambda: ops.batch_norm_infer(x, mean, var, g, b, 1e-5), [x, g, b]
    if name in ("relu", "sigmoid"):
        x = p(2, 3, 4, 4)
        return lambda: ops.activation(x, name), [x]
    if name == "concat_channels":
        a, b = p(1, 1, 3, 3), p(1, 2, 3, 3)
        return lambda: ops.concat_channels([a, b]), [a, b]
    if name.startswith("eltwise_"):
        a, b = p(2, 2, 3, 3), p(2, 2, 3, 3)
        return lambda: ops.eltwise(a, b, name.split("_")[1]), [a, b]
    if name == "expand_channels":
        x = p(2, 1, 3, 3)
        return lambda: ops.expand_channels(x, 4), [x]
    if name == "flatten_permute":
        x = p(2, 3, 4, 5)
        return lambda: ops.flatten_permute(x), [x]
    if name == "unflatten_permute":
        x = p(2, 20, 3)
        return lambda: ops.unflatten_permute(x, 4, 5), [x]
    if name == "scale":
        x = p(2, 3)
        return lambda: ops.scale(x, -2.5), [x]
    if name == "transpose_last":
        x = p(2, 3, 4)
        return lambda: ops.transpose_last(x), [x]
    if name == "resize":
        x = p(1, 2, 5, 3)
        return lambda: ops.resize(x, (7, 4)), [x]
    if name == "tsum":
        x = p(2, 3, 3)
        return lambda: ops.tsum(x * x), [x]
    if name == "tmean":
        x = p(2, 3, 3)
        return lambda: ops.tmean(x * x), [x]
    if name == "add_scalars":
        a, b = p(2, 2), p(3)
        return lambda: ops.add_scalars([(1.5, ops.tsum(a * a)), (-4.0, ops.tmean(b * b))]), [a, b]
    if name == "structure_loss":
        z = p(2, 1, 8, 8, scale=2.0)
        gt = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
        return lambda: structure_loss(z, gt), [z]
    if name == "balanced_bce":
        z = p(2, 1, 6, 6, scale=2.0)
        gt = (rng.random((2, 1, 6, 6)) > 0.7).astype(float)
        return lambda: balanced_bce(z, gt), [z]
    raise KeyError(name)


def _check_op(name: str, seed: int, h: float, tol: float) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    fn, inputs = _op_case(name, rng)
    if name in ("structure_loss", "balanced_bce", "tsum", "tmean", "add_scalars"):
        f = fn
    else:
        r = Tensor(rng.standard_normal(fn().shape))
        f = lambda: ops.tsum(fn() * r)  # noqa: E731
    return finite_diff_check(f, inputs, h, tol, op_name=name)


def toy_config(seed: int = 0, use_dam: bool = True) -> ModelConfig:
    """Small network used by the end-to-end gradient check: 8-channel features throughout."""
    return ModelConfig(main_size=32, channels=(8, 8, 8, 8), width=8, key_dim=8, use_dam=use_dam, seed=seed)


def _toy_inputs(seed: int, cfg: ModelConfig, batch: int = 1):
    rng = np.random.default_rng(seed)
    image = Tensor(rng.random((batch, 3, cfg.main_size, cfg.main_size)))
    out = cfg.main_size // 2
    gt = np.zeros((batch, 1, out, out))
    gt[:, :, out // 4 : 3 * out // 4, out // 3 : 5 * out // 6] = 1.0
    return rng, image, gt


def _module_cases(seed: int):
    from .distractor import DistractorAware, SmallEncoder
    from .encoders import MainStage, ResidualBlock
    from .fusion import FeatureFusion
    from .grafting import CrossAttentionGraft, FeatureGrafting, GraftedPyramid, PoolGraft

    rng = np.random.default_rng(seed)
    x = lambda *s: Tensor(rng.standard_normal(s))  # noqa: E731
    cases = []

    block = ResidualBlock(rng, 4)
    xb = x(1, 4, 6, 6)
    cases.append(("residual_block", block, lambda: block(xb)))

    stage = MainStage(rng, 3, 6, False, 1)
    xs = x(1, 3, 8, 8)
    cases.append(("main_stage", stage, lambda: stage(xs)))

    pg = PoolGraft(rng, 4, 5, 6)
    g, f = x(1, 4, 4, 4), x(1, 5, 4, 4)
    cases.append(("pool_graft", pg, lambda: pg(g, f)))

    ca = CrossAttentionGraft(rng, 4, 5, 6, key_dim=6)
    g3, f4 = x(1, 4, 2, 2), x(1, 5, 2, 2)
    cases.append(("cross_attention_graft", ca, lambda: ca(g3, f4)))

    from .encoders import FeaturePyramid

    fg = FeatureGrafting(rng, (3, 4, 5, 6), width=4, key_dim=4)
    gp = FeaturePyramid([x(1, 3, 8, 8), x(1, 4, 4, 4), x(1, 5, 2, 2), x(1, 6, 1, 1)], "main")
    fp = FeaturePyramid([x(1, 3, 16, 16), x(1, 4, 8, 8), x(1, 5, 4, 4), x(1, 6, 2, 2)], "sub")
    cases.append(("build_grafted_pyramid", fg, lambda: ops.concat_channels(
        [ops.resize(t, (16, 16)) for t in fg(gp, fp).F])))

    fusion = FeatureFusion(rng, width=4)
    Fs = [x(1, 4, s, s) for s in (16, 8, 4, 2)]
    cases.append(("decode", fusion, lambda: fusion(GraftedPyramid(Fs, 4)).coarse))

    se = SmallEncoder(rng, 4)
    xe = x(1, 4, 5, 5)
    cases.append(("small_encoder", se, lambda: se(xe)))

    dam = DistractorAware(rng, 4)
    F1, coarse = x(1, 4, 6, 6), x(1, 1, 6, 6)

    def dam_out():
        b = dam(F1, coarse)
        return ops.concat_channels([b.refined, b.fn_pred, b.fp_pred])

    cases.append(("distractor_aware", dam, dam_out))
    return cases


def _check_module(name: str, module: nn.Module, fn, seed: int, h: float, tol: float,
                  max_coords: int) -> GradCheckReport:
    rng = np.random.default_rng(seed + 1)
    r = Tensor(rng.standard_normal(fn().shape))
    return finite_diff_check(lambda: ops.tsum(fn() * r), module.parameters(), h, tol, op_name=name,
                             max_coords=max_coords, rng=rng)


def full_network_check(seed: int = 0, h: float = 1e-5, tol: float = 1e-4, max_coords: int = 4,
                       corrupt: bool = False) -> list[GradCheckReport]:
    """Check every parameter tensor of the toy network against central differences.

    Distractor targets are computed once from the unperturbed coarse map and
    then held fixed: they are data, not part of the differentiable path.
    """
    cfg = toy_config(seed)
    model = FDNet(cfg)
    rng, image, gt = _toy_inputs(seed, cfg)
    with no_grad():
        targets = distractor_targets(model(image).coarse, gt)

    def loss() -> Tensor:
        return total_loss(model(image), targets, gt).total

    model.zero_grad()
    from .numcore import backward

    backward(loss())
    reports = []
    for name, p in model.named_parameters():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        if corrupt:
            analytic = analytic * 1.1 + 1e-3
        reports.append(finite_diff_check(loss, [p], h, tol, op_name=f"full:{name}", max_coords=max_coords,
                                         rng=rng, analytic=[analytic]))
    return reports


def gradcheck_cmd(scope: str = "ops", seed: int = 0, h: float = 1e-5, tol: float = 1e-4,
                  corrupt: bool = False, max_coords: int = 4) -> list[GradCheckReport]:
    if scope not in ("ops", "modules", "full"):
        raise ValueError(f"unknown gradcheck scope {scope!r}")
    reports: list[GradCheckReport] = []
    if scope == "ops":
        for i, name in enumerate(OP_NAMES):
            rep = _check_op(name, seed + i, h, tol)
            if corrupt and i == 0:
                rep = _corrupted(name, seed + i, h, tol)
            reports.append(rep)
    elif scope == "modules":
        for name, module, fn in _module_cases(seed):
            reports.append(_check_module(name, module, fn, seed, h, tol, max_coords))
        if corrupt:
            reports.append(_corrupted("conv2d", seed, h, tol))
    else:
        reports.extend(full_network_check(seed, h, tol, max_coords, corrupt))
    return reports


def _corrupted(name: str, seed: int, h: float, tol: float) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    fn, inputs = _op_case(name, rng)
    r = Tensor(rng.standard_normal(fn().shape))
    f = lambda: ops.tsum(fn() * r)  # noqa: E731
    from .numcore import backward

    for t in inputs:
        t.grad = None
    backward(f())
    bad = [t.grad * 1.1 + 1e-3 for t in inputs]
    return finite_diff_check(f, inputs, h, tol, op_name=f"{name}[corrupted]", analytic=bad)
