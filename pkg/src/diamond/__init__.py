"""Multi-modal Vision Transformer for paired MRI/PET volumes, built on a small numpy autodiff core."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import BranchSet, ModelConfig, full_size_config
from .metrics import MetricsReport, compute_metrics, fairness_report
from .model import DiaMond, ablation_variants, count_parameters
from .tensor import Parameter, Tensor, no_grad
from .training import AdamW, Dataset, TrainConfig, cosine_lr, evaluate, train

__all__ = [
    "AdamW",
    "BranchSet",
    "Dataset",
    "DiaMond",
    "MetricsReport",
    "ModelConfig",
    "Parameter",
    "Tensor",
    "TrainConfig",
    "ablation_variants",
    "compute_metrics",
    "cosine_lr",
    "count_parameters",
    "evaluate",
    "fairness_report",
    "load_checkpoint",
    "no_grad",
    "full_size_config",
    "save_checkpoint",
    "train",
]
