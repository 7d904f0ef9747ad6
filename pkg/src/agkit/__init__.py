"""agkit: attention-gated segmentation and classification networks on a
minimal reverse-mode autodiff engine, with gradient-check verification,
synthetic desk-scale tasks, and attention-map localization."""

from .attention_gate import (
    AttentionGateParams,
    AttentionMap,
    apply_gate,
    compatibility,
    gated_skip,
    init_passthrough,
    normalize,
    resample_to_grid,
)
from .autodiff import GradCheckResult, Tape, Tensor, check_gradients, no_grad
from .classifier import AGClassifier, ClassifierConfig, attended_pool, train_cls
from .config import ConfigError, RunConfig, load_config, parse_config
from .estimators import AttentionGatedClassifier, AttentionUNetSegmenter
from .losses import cross_entropy, dice_loss
from .metrics import MetricsRecord, cls_metrics, seg_metrics
from .optim import Adam, NumericAbort, SGDNesterov, make_optimizer
from .synthdata import SynthSample, augment, gen_cls, gen_seg
from .unet import AttentionUNet, SegOutput, UNetConfig, train_seg
from .wsl import BoundingBox, connected_components, localize, wsl_score

__version__ = "0.1.0"

__all__ = [
    "AGClassifier",
    "Adam",
    "AttentionGateParams",
    "AttentionGatedClassifier",
    "AttentionMap",
    "AttentionUNet",
    "AttentionUNetSegmenter",
    "BoundingBox",
    "ClassifierConfig",
    "ConfigError",
    "GradCheckResult",
    "MetricsRecord",
    "NumericAbort",
    "RunConfig",
    "SGDNesterov",
    "SegOutput",
    "SynthSample",
    "Tape",
    "Tensor",
    "UNetConfig",
    "apply_gate",
    "attended_pool",
    "augment",
    "check_gradients",
    "cls_metrics",
    "compatibility",
    "connected_components",
    "cross_entropy",
    "dice_loss",
    "gated_skip",
    "gen_cls",
    "gen_seg",
    "init_passthrough",
    "load_config",
    "localize",
    "make_optimizer",
    "no_grad",
    "normalize",
    "parse_config",
    "resample_to_grid",
    "seg_metrics",
    "train_cls",
    "train_seg",
    "wsl_score",
]
