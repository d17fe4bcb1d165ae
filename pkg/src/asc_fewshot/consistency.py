"""Adaptive source-sample weighting and feature-consistency regularization.

During finetuning, a batch of unlabeled source rows is pushed through
both the frozen reference encoder and the trainable one. Each row is
weighted by how close its reference feature sits to the support-set
prototype (softmax of negative distance, rescaled by the batch size so
the weights average to one), and the weighted mean squared feature
discrepancy between the two encoders is added to the classification
objective. Weights and the prototype are recomputed every epoch and
treated as constants: gradients flow only into the trainable encoder.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Set, Union

import numpy as np

from .autodiff import Tensor, no_grad
from .data import Dataset
from .encoder import Encoder
from .errors import ContractError, DomainError

REG_BLOCK_CHOICES = ("semantic", "all")


@dataclass
class ASCConfig:
    """Knobs for the consistency regularizer."""

    lambda_: float = 1.0
    batch_b: int = 64
    regularized_block: Union[int, str] = "semantic"
    regularization_inputs: str = "source"
    top_m: Optional[int] = None
    weights_enabled: bool = True
    prototype_encoder: str = "target"

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ContractError("lambda must be >= 0")
        if self.batch_b < 1:
            raise ContractError("batch_b must be >= 1")
        if isinstance(self.regularized_block, str):
            if self.regularized_block not in REG_BLOCK_CHOICES:
                raise ContractError(
                    f"regularized_block must be a block index, 'semantic' or 'all', got {self.regularized_block!r}"
                )
        elif self.regularized_block < 1:
            raise ContractError("block indices start at 1")
        if self.regularization_inputs not in ("source", "target"):
            raise ContractError("regularization_inputs must be 'source' or 'target'")
        if self.top_m is not None and self.top_m < 1:
            raise ContractError("top_m must be >= 1 when set")
        if self.prototype_encoder not in ("target", "source"):
            raise ContractError("prototype_encoder must be 'target' or 'source'")


def support_prototype(encoder: Encoder, support_inputs) -> np.ndarray:
    """Mean feature of the support set under the encoder's current parameters.

    Returned as a plain array: the prototype only steers the weighting
    and never takes part in gradient flow.
    """
    inputs = np.asarray(support_inputs, dtype=np.float64)
    if inputs.ndim != 2 or len(inputs) == 0:
        raise ContractError("support must be a non-empty batch of vectors")
    with no_grad():
        feats = encoder.forward(inputs).data
    return feats.mean(axis=0)


def source_target_distances(encoder: Encoder, inputs, prototype: np.ndarray) -> np.ndarray:
    """Euclidean distance from each row's reference feature to the prototype."""
    prototype = np.asarray(prototype, dtype=np.float64)
    with no_grad():
        feats = encoder.forward(np.asarray(inputs, dtype=np.float64)).data
    if prototype.shape != (feats.shape[1],):
        raise ContractError(
            f"prototype dim {prototype.shape} does not match feature dim {feats.shape[1]}"
        )
    diff = feats - prototype
    return np.sqrt((diff * diff).sum(axis=1))


def adaptive_weights(distances, enabled: bool = True) -> np.ndarray:
    """Softmax of negative distance, rescaled by the batch size.

    The rescaling keeps the overall magnitude unchanged: the weights sum
    to the batch size, and equal distances give exactly 1 everywhere.
    With ``enabled=False`` (the ablation) every weight is 1.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ContractError("distances must be a non-empty vector")
    if not np.all(np.isfinite(d)):
        raise DomainError("distances must be finite")
    if not enabled:
        return np.ones(d.size)
    shifted = -d - (-d).max()
    e = np.exp(shifted)
    return e * d.size / e.sum()


def consistency_loss(
    f_s: Encoder,
    f_t: Encoder,
    inputs,
    weights,
    block: Union[int, str] = "semantic",
) -> Tensor:
    """Weighted mean squared feature discrepancy between the two encoders.

    ``block`` picks which activations are compared: "semantic" (the
    final feature output), a 1-based block index, or "all" for the
    uniform average of every block's loss. Gradients reach only ``f_t``;
    the reference activations and the weights are constants.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n = len(inputs)
    if w.shape != (n,):
        raise ContractError(f"weights shape {w.shape} does not match batch size {n}")
    if isinstance(block, int) and not 1 <= block <= f_t.num_blocks:
        raise ContractError(f"block index {block} outside [1, {f_t.num_blocks}]")

    with no_grad():
        ref_acts = f_s.forward_blocks(inputs)
    tgt_acts = f_t.forward_blocks(inputs)

    if block == "semantic":
        pairs = [(ref_acts[-1], tgt_acts[-1])]
    elif block == "all":
        pairs = list(zip(ref_acts, tgt_acts))
    else:
        pairs = [(ref_acts[block - 1], tgt_acts[block - 1])]

    w_tensor = Tensor(w)
    total = None
    for ref, tgt in pairs:
        diff = tgt - ref
        per_sample = diff.square().sum(axis=1)
        loss = (per_sample * w_tensor).sum() * (1.0 / n)
        total = loss if total is None else total + loss
    if len(pairs) > 1:
        total = total * (1.0 / len(pairs))
    return total


def total_loss(l_cls: Tensor, l_con: Tensor, lambda_: float) -> Tensor:
    """Classification loss plus lambda times the consistency loss."""
    return l_cls + l_con * float(lambda_)


def select_top_m_classes(source_ds: Dataset, encoder: Encoder, support_inputs, m: int) -> Set[int]:
    """Source classes whose prototypes sit closest to the support prototype.

    Both prototype sides are computed with the *pretrained* encoder, so
    the selection is fixed for the whole finetuning run. Ties break
    toward the smaller class id.
    """
    if not 1 <= m <= source_ds.num_classes:
        raise ContractError(f"m must lie in [1, {source_ds.num_classes}], got {m}")
    with no_grad():
        source_feats = encoder.forward(source_ds.inputs).data
        support_feats = encoder.forward(np.asarray(support_inputs, dtype=np.float64)).data
    support_proto = support_feats.mean(axis=0)
    protos = np.empty((source_ds.num_classes, source_feats.shape[1]))
    for c in range(source_ds.num_classes):
        protos[c] = source_feats[source_ds.class_indices(c)].mean(axis=0)
    diff = protos - support_proto
    dist = np.sqrt((diff * diff).sum(axis=1))
    order = np.lexsort((np.arange(source_ds.num_classes), dist))
    return set(int(c) for c in order[:m])


def target_consistency_variant(
    f_s: Encoder, f_t: Encoder, support_inputs, block: Union[int, str] = "semantic"
) -> Tensor:
    """Consistency loss evaluated on the support images with uniform weights."""
    inputs = np.asarray(support_inputs, dtype=np.float64)
    return consistency_loss(f_s, f_t, inputs, np.ones(len(inputs)), block=block)
