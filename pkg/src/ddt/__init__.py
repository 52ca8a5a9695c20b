"""DDT: a dual-branch deformable-attention image denoiser on numpy.

The package is self-contained: a small tape autodiff engine, the network
primitives built on it, an exact analytic FLOP/parameter cost model, and a
deterministic training/evaluation harness with a CLI (`ddt`).
"""

from .attention import (
    DeformableAttention,
    DeformableField,
    DeformAttnConfig,
    DenseAttention,
    multi_head_attention,
    reference_grid,
    sample_deformed,
)
from .blocks import (
    BlockConfig,
    DualBranchAttention,
    FeedForward,
    TransformerBlock,
    partition_global,
    partition_local,
    unpartition_global,
    unpartition_local,
)
from .checkpoint import (
    CheckpointData,
    CheckpointError,
    load_checkpoint,
    model_from_checkpoint,
    restore_model,
    save_checkpoint,
)
from .configio import Config, ConfigError, DataConfig, load_config
from .costs import (
    CostQuery,
    CostReport,
    cost_branch,
    cost_conv,
    cost_da,
    cost_dda,
    cost_network,
    cost_subparts,
    count_params,
    empirical_op_counter,
)
from .data import SamplePair, dihedral_transform, make_clean_images, synth_pair
from .metrics import psnr, ssim
from .network import DenoiseNet, NetworkConfig, build, toy_config
from .optim import AdamW, cosine_lr
from .tensor import FlopCounter, ShapeMismatchError, Tape, Tensor
from .training import NumericError, TrainConfig, denoise_image, evaluate, l1_loss, train

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "BlockConfig",
    "CheckpointData",
    "CheckpointError",
    "Config",
    "ConfigError",
    "CostQuery",
    "CostReport",
    "DataConfig",
    "DeformAttnConfig",
    "DeformableAttention",
    "DeformableField",
    "DenoiseNet",
    "DenseAttention",
    "DualBranchAttention",
    "FeedForward",
    "FlopCounter",
    "NetworkConfig",
    "NumericError",
    "SamplePair",
    "ShapeMismatchError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TransformerBlock",
    "build",
    "cosine_lr",
    "cost_branch",
    "cost_conv",
    "cost_da",
    "cost_dda",
    "cost_network",
    "cost_subparts",
    "count_params",
    "denoise_image",
    "dihedral_transform",
    "empirical_op_counter",
    "evaluate",
    "l1_loss",
    "load_checkpoint",
    "load_config",
    "make_clean_images",
    "model_from_checkpoint",
    "multi_head_attention",
    "partition_global",
    "partition_local",
    "psnr",
    "reference_grid",
    "restore_model",
    "sample_deformed",
    "save_checkpoint",
    "ssim",
    "synth_pair",
    "toy_config",
    "train",
    "unpartition_global",
    "unpartition_local",
]
