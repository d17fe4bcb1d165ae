"""Classification losses selectable at finetune time.

Three interchangeable objectives over encoder features:

* cross-entropy through a linear head,
* a distractor-contrastive loss whose negatives mix differently-labeled
  support samples with unlabeled source rows, and
* a supervised contrastive loss over the support set alone.

Contrastive dot products are taken between L2-normalized features by
default (standard practice at temperatures around 0.05-0.1); pass
``normalize=False`` for raw dot products. The supervised contrastive
denominator includes the anchor's own similarity term by default, with
``include_self=False`` as the escape hatch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Tensor,
    add,
    broadcast_cols,
    exp,
    l2_normalize,
    log,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    sub,
    transpose,
)
from .encoder import LinearHead
from .errors import ContractError, DegenerateEpisodeError

LOSS_KINDS = ("cross_entropy", "conft", "supcon")

_MASK_OFF = -1e30  # additive mask; exp underflows to exactly zero


@dataclass
class LossSpec:
    """Which classification loss to run and its knobs."""

    kind: str = "supcon"
    tau: float = 0.05
    include_self_in_denominator: bool = True
    normalize: bool = True
    n_distractors: int = 16
    anchor_fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ContractError(f"unknown loss kind {self.kind!r}, expected one of {LOSS_KINDS}")
        if self.tau <= 0:
            raise ContractError("temperature tau must be > 0")
        if self.kind == "conft" and self.n_distractors < 1:
            raise ContractError("conft needs n_distractors >= 1")
        if not 0.0 < self.anchor_fraction <= 1.0:
            raise ContractError("anchor_fraction must lie in (0, 1]")

    @property
    def contrastive(self) -> bool:
        return self.kind in ("conft", "supcon")


def _labels_array(labels, n: int, upper: int) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 1 or len(arr) != n:
        raise ContractError(f"expected {n} labels, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= upper):
        raise ContractError(f"labels must lie in [0, {upper})")
    return arr


def _masked_row_logsumexp(scores: Tensor, keep: np.ndarray) -> Tensor:
    """Row-wise log-sum-exp over the entries where ``keep`` is true.

    The row max is subtracted as a constant; that leaves both the value
    and the gradient exact while keeping exp in range. Masked-out
    entries get -1e30 added, so their exp underflows to exactly zero.
    """
    masked = scores
    if not keep.all():
        masked = add(scores, Tensor(np.where(keep, 0.0, _MASK_OFF)))
    row_max = masked.data.max(axis=1)
    shifted = sub(masked, Tensor(np.broadcast_to(row_max[:, None], masked.shape)))
    return add(log(reduce_sum(exp(shifted), axis=1)), Tensor(row_max))


def cross_entropy_loss(head: LinearHead, features: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true label."""
    logits = head.forward(features)
    n, c = logits.shape
    y = _labels_array(labels, n, c)
    lse = _masked_row_logsumexp(logits, np.ones((n, c), dtype=bool))
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    picked = reduce_sum(mul(logits, Tensor(onehot)), axis=1)
    return reduce_mean(sub(lse, picked))


def supcon_loss(
    features: Tensor,
    labels,
    tau: float,
    include_self: bool = True,
    normalize: bool = True,
) -> Tensor:
    """Supervised contrastive loss over one batch of labeled features.

    Positives of an anchor are the other samples sharing its label; the
    denominator ranges over the whole batch, including the anchor itself
    unless ``include_self`` is false.
    """
    if tau <= 0:
        raise ContractError("temperature tau must be > 0")
    n = features.shape[0]
    y = _labels_array(labels, n, upper=np.iinfo(np.int64).max)
    same = y[:, None] == y[None, :]
    off_diag = ~np.eye(n, dtype=bool)
    pos = same & off_diag
    pos_counts = pos.sum(axis=1)
    if np.any(pos_counts == 0):
        raise DegenerateEpisodeError(
            "every sample needs at least one same-label partner; "
            "expand single-shot supports with augmented views"
        )
    z = l2_normalize(features) if normalize else features
    scores = mul(matmul(z, transpose(z)), Tensor(np.full((n, n), 1.0 / tau)))
    keep = np.ones((n, n), dtype=bool) if include_self else off_diag
    lse = _masked_row_logsumexp(scores, keep)
    pos_weights = pos / pos_counts[:, None]
    pos_term = reduce_sum(mul(scores, Tensor(pos_weights)), axis=1)
    return reduce_mean(sub(lse, pos_term))


def conft_loss(
    support_features: Tensor,
    labels,
    distractor_features: Tensor,
    tau: float,
    normalize: bool = True,
    anchor_indices: Optional[Sequence[int]] = None,
) -> Tensor:
    """Distractor-contrastive loss.

    Every anchor/positive pair is scored against the anchor's
    differently-labeled support samples plus all distractors; other
    positives never enter the denominator.
    """
    if tau <= 0:
        raise ContractError("temperature tau must be > 0")
    ns = support_features.shape[0]
    nd = distractor_features.shape[0]
    if nd == 0:
        raise ContractError("conft requires a non-empty distractor set")
    y = _labels_array(labels, ns, upper=np.iinfo(np.int64).max)

    anchors = np.arange(ns) if anchor_indices is None else np.asarray(anchor_indices, dtype=np.int64)
    if anchors.size == 0:
        raise ContractError("conft needs at least one anchor")
    if anchors.min() < 0 or anchors.max() >= ns:
        raise ContractError("anchor indices out of range")

    zs = l2_normalize(support_features) if normalize else support_features
    zd = l2_normalize(distractor_features) if normalize else distractor_features

    na = len(anchors)
    selector = np.zeros((na, ns))
    selector[np.arange(na), anchors] = 1.0
    za = matmul(Tensor(selector), zs)

    inv_tau = 1.0 / tau
    sup_scores = mul(matmul(za, transpose(zs)), Tensor(np.full((na, ns), inv_tau)))
    dist_scores = mul(matmul(za, transpose(zd)), Tensor(np.full((na, nd), inv_tau)))

    anchor_labels = y[anchors]
    same = anchor_labels[:, None] == y[None, :]
    not_self = np.ones((na, ns), dtype=bool)
    not_self[np.arange(na), anchors] = False
    pos = same & not_self
    pos_counts = pos.sum(axis=1)
    if np.any(pos_counts == 0):
        raise DegenerateEpisodeError(
            "every anchor needs at least one same-label partner; "
            "expand single-shot supports with augmented views"
        )
    neg = ~same

    # Shared per-anchor tail of the denominator: negatives plus distractors.
    tail = _pairwise_logsumexp_vec(
        _masked_row_logsumexp(sup_scores, neg) if neg.any() else None,
        _masked_row_logsumexp(dist_scores, np.ones((na, nd), dtype=bool)),
    )
    denom = _pairwise_logsumexp_mat(sup_scores, broadcast_cols(tail, ns))
    pair_terms = sub(denom, sup_scores)  # -log l_ip for every (anchor, candidate)
    weights = pos / pos_counts[:, None]
    return reduce_mean(reduce_sum(mul(pair_terms, Tensor(weights)), axis=1))


def _pairwise_logsumexp_vec(a: Optional[Tensor], b: Tensor) -> Tensor:
    """log(exp(a) + exp(b)) elementwise for two vectors; ``a`` may be absent."""
    if a is None:
        return b
    m = np.maximum(a.data, b.data)
    const = Tensor(m)
    return add(log(add(exp(sub(a, const)), exp(sub(b, const)))), const)


def _pairwise_logsumexp_mat(a: Tensor, b: Tensor) -> Tensor:
    m = np.maximum(a.data, b.data)
    const = Tensor(m)
    return add(log(add(exp(sub(a, const)), exp(sub(b, const)))), const)
