"""Multi-label signal classification with expert importance-mask feedback."""

from .data import (
    DatasetManifest,
    MaskSet,
    SignalExample,
    SyntheticSpec,
    flatten_mask,
    generate_synthetic,
    load_dataset,
    save_dataset,
    unflatten_mask,
)
from .estimator import SignalMaskClassifier
from .metrics import ScoreMatrix, fmax, macro_auc
from .model import ConvBlockSpec, InceptionBlockSpec, ModelConfig, ModelParams
from .objective import ObjectiveConfig, objective_batch
from .saliency import SaliencyMap, compute_saliency, mask_overlap
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest",
    "MaskSet",
    "SignalExample",
    "SyntheticSpec",
    "flatten_mask",
    "unflatten_mask",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "SignalMaskClassifier",
    "ScoreMatrix",
    "fmax",
    "macro_auc",
    "ModelConfig",
    "ModelParams",
    "ConvBlockSpec",
    "InceptionBlockSpec",
    "ObjectiveConfig",
    "objective_batch",
    "SaliencyMap",
    "compute_saliency",
    "mask_overlap",
    "TrainConfig",
    "train",
    "__version__",
]
