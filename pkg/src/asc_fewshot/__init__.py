"""Consistency-regularized few-shot finetuning on synthetic shifted domains.

The library pretrains a small block encoder on a synthetic source
domain, finetunes clones of it on N-way K-shot target episodes under
pluggable classification losses, and regularizes the finetuning with an
adaptively re-weighted feature-consistency penalty against the frozen
pretrained copy.
"""
from .autodiff import Tensor, no_grad
from .consistency import (
    ASCConfig,
    adaptive_weights,
    consistency_loss,
    select_top_m_classes,
    source_target_distances,
    support_prototype,
    target_consistency_variant,
    total_loss,
)
from .data import (
    Dataset,
    DomainPrior,
    Episode,
    SourceBatch,
    generate_source,
    generate_target,
    sample_episode,
    sample_source_batch,
)
from .encoder import (
    Encoder,
    LinearHead,
    block_parameter_change,
    clone_frozen,
    parameter_checksum,
)
from .estimators import ConsistencyFinetuneClassifier, SourcePretrainer
from .losses import LossSpec, conft_loss, cross_entropy_loss, supcon_loss
from .training import (
    Adam,
    EpisodeSpec,
    EvalReport,
    FinetuneConfig,
    OptimizerConfig,
    SGD,
    classify_queries,
    evaluate,
    finetune_episode,
    pretrain,
)

__version__ = "0.1.0"

__all__ = [
    "ASCConfig",
    "Adam",
    "ConsistencyFinetuneClassifier",
    "Dataset",
    "DomainPrior",
    "Encoder",
    "Episode",
    "EpisodeSpec",
    "EvalReport",
    "FinetuneConfig",
    "LinearHead",
    "LossSpec",
    "OptimizerConfig",
    "SGD",
    "SourceBatch",
    "SourcePretrainer",
    "Tensor",
    "adaptive_weights",
    "block_parameter_change",
    "classify_queries",
    "clone_frozen",
    "conft_loss",
    "consistency_loss",
    "cross_entropy_loss",
    "evaluate",
    "finetune_episode",
    "generate_source",
    "generate_target",
    "no_grad",
    "parameter_checksum",
    "pretrain",
    "sample_episode",
    "sample_source_batch",
    "select_top_m_classes",
    "source_target_distances",
    "supcon_loss",
    "support_prototype",
    "target_consistency_variant",
    "total_loss",
]
