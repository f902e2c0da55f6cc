"""Minimal tensor autodiff engine and the regression models built on it."""

from .gradcheck import grad_check
from .layers import (
    Dropout,
    EncoderBlock,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    PositionalFusion,
    combine_positional,
)
from .models import (
    BackboneConfig,
    CnnRegressor,
    CnnRegressorConfig,
    ConvBackbone,
    TransformerConfig,
    WindowTransformer,
)
from .robust import log_partition, log_partition_table, robust_loss
from .tensor import Tensor, concat, conv2d, gelu, softmax
from .training import (
    Adam,
    Checkpoint,
    ImageStore,
    PairItem,
    TrainConfig,
    WindowItem,
    fit,
    infer_cnn,
    infer_windows,
    load_checkpoint,
    pair_items,
    save_checkpoint,
    window_items,
)

__all__ = [
    "Adam",
    "BackboneConfig",
    "Checkpoint",
    "CnnRegressor",
    "CnnRegressorConfig",
    "ConvBackbone",
    "Dropout",
    "EncoderBlock",
    "ImageStore",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadSelfAttention",
    "PairItem",
    "PositionalFusion",
    "Tensor",
    "TrainConfig",
    "TransformerConfig",
    "WindowItem",
    "WindowTransformer",
    "combine_positional",
    "concat",
    "conv2d",
    "fit",
    "gelu",
    "grad_check",
    "infer_cnn",
    "infer_windows",
    "load_checkpoint",
    "log_partition",
    "log_partition_table",
    "pair_items",
    "robust_loss",
    "save_checkpoint",
    "softmax",
    "window_items",
]
