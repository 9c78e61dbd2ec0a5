"""FDNet camouflaged-object segmentation on a small float64 autodiff core."""

from .data import DatasetIndex, split_dataset, synth_generate
from .estimator import FDNetSegmenter
from .losses import balanced_bce, structure_loss, total_loss
from .metrics import MetricReport, e_measure, evaluate_dataset, mae, s_measure, weighted_fbeta
from .model import FDNet, ModelConfig
from .pipeline import TrainConfig, gradcheck_cmd, infer, train

__all__ = [
    "DatasetIndex", "FDNet", "FDNetSegmenter", "MetricReport", "ModelConfig", "TrainConfig",
    "balanced_bce", "e_measure", "evaluate_dataset", "gradcheck_cmd", "infer", "mae", "s_measure",
    "split_dataset", "structure_loss", "synth_generate", "total_loss", "train", "weighted_fbeta",
]
__version__ = "0.1.0"
