"""Cross-lingual text classification by representation projection."""

from .errors import ConfigError, DataError, NumericError, ReprojError
from .estimator import RepresentationProjectionClassifier, ReviewEncoder
from .evaluation import EvalReport, evaluate, f1_score, fisher_exact, interpolate, neighbors, size_sweep
from .model import HierarchicalGRU, ModelConfig, load_checkpoint, save_checkpoint
from .synth import SynthSpec, generate, score_neighbor_recovery
from .textpipe import Vocabulary, build_vocab, encode_review, tokenize
from .transfer import (
    TransferConfig,
    label_projection_loss,
    labeled_loss,
    projection_loss,
    swap_embeddings,
    train_joint,
    train_labeled,
    train_two_stage,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EvalReport",
    "HierarchicalGRU",
    "ModelConfig",
    "NumericError",
    "ReprojError",
    "RepresentationProjectionClassifier",
    "ReviewEncoder",
    "SynthSpec",
    "TransferConfig",
    "Vocabulary",
    "build_vocab",
    "encode_review",
    "evaluate",
    "f1_score",
    "fisher_exact",
    "generate",
    "interpolate",
    "label_projection_loss",
    "labeled_loss",
    "load_checkpoint",
    "neighbors",
    "projection_loss",
    "save_checkpoint",
    "score_neighbor_recovery",
    "size_sweep",
    "swap_embeddings",
    "tokenize",
    "train_joint",
    "train_labeled",
    "train_two_stage",
]
