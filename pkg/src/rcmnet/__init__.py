"""ResNet18 with CBAM and bottleneck-transformer attention, built on a numpy autodiff core."""

from .blocks import BoTBlock, CBAM, ChannelAttention, MultiHeadSelfAttention, ResidualBlock, SpatialAttention
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    LabeledDataset,
    augment,
    balance_classes,
    load_dataset,
    preprocess,
    split_train_test,
    synth_generate,
)
from .gradcam import GradCamResult, compute_gradcam, export_heatmap
from .model import ARCHITECTURES, build_model, forward, set_trainable
from .tensor import Tensor, backward, finite_diff_grad, no_grad
from .training import Metrics, TrainConfig, cross_entropy, evaluate, sgd_step, train, transfer_learn

__all__ = [
    "ARCHITECTURES",
    "BoTBlock",
    "CBAM",
    "ChannelAttention",
    "GradCamResult",
    "LabeledDataset",
    "Metrics",
    "MultiHeadSelfAttention",
    "ResidualBlock",
    "SpatialAttention",
    "Tensor",
    "TrainConfig",
    "augment",
    "backward",
    "balance_classes",
    "build_model",
    "compute_gradcam",
    "cross_entropy",
    "evaluate",
    "export_heatmap",
    "finite_diff_grad",
    "forward",
    "load_checkpoint",
    "load_dataset",
    "no_grad",
    "preprocess",
    "save_checkpoint",
    "set_trainable",
    "sgd_step",
    "split_train_test",
    "synth_generate",
    "train",
    "transfer_learn",
]

__version__ = "0.1.0"
