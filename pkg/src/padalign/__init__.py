"""Prior-informed adaptive alignment of speech and text encoder embeddings."""

from .autodiff import ContractViolation, Tensor, grad_check, tensor
from .encoder import AttentionStack, Encoder, EncoderConfig, EncoderOutput, pool_global
from .losses import (
    VARIANTS,
    LossSpec,
    SimilarityMatrix,
    ctc_ordered,
    global_l1,
    joint_loss,
    local_maxsim,
    pad_global,
    similarity_matrix,
    span_local,
    weighted_local,
)
from .significance import IdfTable, SignificancePrior, apply_prior, asp, idf_weights
from .spans import SpanConfig, SpanPoolSet, aasa
from .synthdata import Dataset, GenConfig, PairedExample, generate, split
from .tensorio import TensorRecord, read_bundle, write_bundle
from .trainer import (
    MetricsHistory,
    TrainConfig,
    TrainResult,
    eval_frame_alignment,
    eval_retrieval,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionStack",
    "ContractViolation",
    "Dataset",
    "Encoder",
    "EncoderConfig",
    "EncoderOutput",
    "GenConfig",
    "IdfTable",
    "LossSpec",
    "MetricsHistory",
    "PairedExample",
    "SignificancePrior",
    "SimilarityMatrix",
    "SpanConfig",
    "SpanPoolSet",
    "Tensor",
    "TensorRecord",
    "TrainConfig",
    "TrainResult",
    "VARIANTS",
    "aasa",
    "apply_prior",
    "asp",
    "ctc_ordered",
    "eval_frame_alignment",
    "eval_retrieval",
    "generate",
    "global_l1",
    "grad_check",
    "idf_weights",
    "joint_loss",
    "local_maxsim",
    "pad_global",
    "pool_global",
    "read_bundle",
    "similarity_matrix",
    "span_local",
    "split",
    "tensor",
    "train",
    "weighted_local",
    "write_bundle",
]
