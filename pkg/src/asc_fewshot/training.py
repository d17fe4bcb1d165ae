"""Pretraining, episode finetuning, optimizers and episode-based evaluation.

Finetuning clones the pretrained encoder twice: a frozen reference copy
and a trainable copy. Each epoch computes the configured classification
loss on the support set, optionally adds the weighted consistency loss
on a freshly sampled source batch, and steps the optimizer on the
trainable copy only.

Randomness is split into two independent streams per run — one for the
classification path (head init, augmentation jitter, distractor draws)
and one for the consistency path (source batches) — so enabling the
regularizer never perturbs the baseline trajectory. Episode streams are
derived from (master seed, episode index), which keeps concurrent
evaluation bit-identical to the serial order.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Tensor, no_grad
from .consistency import (
    ASCConfig,
    adaptive_weights,
    consistency_loss,
    select_top_m_classes,
    source_target_distances,
    support_prototype,
    total_loss,
)
from .data import (
    Dataset,
    Episode,
    augmentation_sigma,
    jitter,
    sample_episode,
    sample_source_batch,
)
from .encoder import Encoder, LinearHead, block_parameter_change
from .errors import ContractError, NumericError
from .losses import LossSpec, conft_loss, cross_entropy_loss, supcon_loss


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.05

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be > 0")


class SGD:
    """Plain gradient descent: theta <- theta - lr * grad."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        for p in self.params:
            if p.grad is not None:
                p.data -= self.learning_rate * p.grad


class Adam:
    """Adam with bias correction; moments live alongside each parameter."""

    def __init__(
        self,
        params: Sequence[Tensor],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / (1.0 - self.beta1 ** t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** t)
            p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(cfg: OptimizerConfig, params: Sequence[Tensor]):
    if cfg.kind == "sgd":
        return SGD(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate)


def sgd_step(params: Sequence[Tensor], learning_rate: float) -> None:
    """One functional SGD step over parameters holding their gradients."""
    SGD(params, learning_rate).step()


@dataclass
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 5
    n_query: int = 15


@dataclass
class FinetuneConfig:
    """Everything one finetuning run needs besides the data."""

    loss: LossSpec = field(default_factory=LossSpec)
    asc: Optional[ASCConfig] = field(default_factory=ASCConfig)
    epochs: int = 30
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("adam", 5e-3))
    inference_metric: str = "euclidean"


@dataclass
class FinetuneResult:
    encoder: Encoder
    head: Optional[LinearHead]
    cls_losses: List[float]
    con_losses: List[float]
    total_losses: List[float]
    parameter_change: np.ndarray
    source_batches: int


@dataclass
class EvalReport:
    """Per-episode query accuracies with their mean and 95% interval."""

    accuracies: List[float]
    mean_accuracy: float
    ci95: float
    episodes: int
    fingerprint: str
    mean_parameter_change: Optional[np.ndarray] = field(default=None, compare=False)

    @classmethod
    def from_accuracies(cls, accuracies, fingerprint="", mean_parameter_change=None) -> "EvalReport":
        accs = [float(a) for a in accuracies]
        n = len(accs)
        mean = float(np.mean(accs)) if n else 0.0
        ci95 = 0.0 if n < 2 else float(1.96 * np.std(accs, ddof=1) / math.sqrt(n))
        return cls(accs, mean, ci95, n, fingerprint, mean_parameter_change)


def _entropy_tuple(seed) -> Tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(v) for v in seed)


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what} encountered")
    return value


def pretrain(
    source_ds: Dataset,
    encoder: Encoder,
    head: LinearHead,
    epochs: int,
    learning_rate: float,
    seed,
    batch_size: int = 64,
) -> float:
    """Minibatch cross-entropy pretraining; returns final train accuracy."""
    if head.num_classes != source_ds.num_classes:
        raise ContractError(
            f"head has {head.num_classes} classes, dataset has {source_ds.num_classes}"
        )
    return _pretrain_loop(
        source_ds.inputs, source_ds.labels, encoder, head, epochs, learning_rate, seed, batch_size
    )


def _pretrain_loop(inputs, labels, encoder, head, epochs, learning_rate, seed, batch_size) -> float:
    rng = np.random.default_rng(seed)
    optimizer = SGD(encoder.parameters() + head.parameters(), learning_rate)
    n = len(labels)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss = cross_entropy_loss(head, encoder.forward(inputs[idx]), labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            _finite(loss.item(), "pretraining loss")
    return train_accuracy(encoder, head, inputs, labels)


def train_accuracy(encoder: Encoder, head: LinearHead, inputs, labels) -> float:
    with no_grad():
        logits = head.forward(encoder.forward(inputs)).data
    return float(np.mean(logits.argmax(axis=1) == np.asarray(labels)))


def _two_view_support(episode: Episode, rng: np.random.Generator):
    """Two jittered views per support sample so contrastive positives exist at K=1."""
    sigma = augmentation_sigma(episode.shift_magnitude)
    views = np.vstack([
        jitter(episode.support_inputs, rng, sigma),
        jitter(episode.support_inputs, rng, sigma),
    ])
    labels = np.concatenate([episode.support_labels, episode.support_labels])
    return views, labels


def finetune_episode(
    pretrained: Encoder,
    episode: Episode,
    source_ds: Optional[Dataset],
    loss_spec: LossSpec,
    asc_cfg: Optional[ASCConfig],
    epochs: int,
    optimizer_cfg: OptimizerConfig,
    seed,
) -> FinetuneResult:
    """Finetune a trainable clone against a frozen clone of the pretrained encoder."""
    if pretrained.input_dim != episode.support_inputs.shape[1]:
        raise ContractError(
            f"encoder expects dim {pretrained.input_dim}, episode has {episode.support_inputs.shape[1]}"
        )
    cls_ss, asc_ss = np.random.SeedSequence(_entropy_tuple(seed)).spawn(2)
    cls_rng = np.random.default_rng(cls_ss)
    asc_rng = np.random.default_rng(asc_ss)

    f_s = pretrained.clone(trainable=False)
    f_t = pretrained.clone(trainable=True)
    params = f_t.parameters()

    head = None
    if loss_spec.kind == "cross_entropy":
        head = LinearHead.initialize(cls_rng, episode.n_way, f_t.feature_dim)
        params = params + head.parameters()
    optimizer = make_optimizer(optimizer_cfg, params)

    needs_source = loss_spec.kind == "conft" or (
        asc_cfg is not None and asc_cfg.regularization_inputs == "source"
    )
    if needs_source and source_ds is None:
        raise ContractError("this configuration needs a source dataset")

    allowed_classes = None
    if (
        asc_cfg is not None
        and asc_cfg.top_m is not None
        and asc_cfg.regularization_inputs == "source"
    ):
        allowed_classes = sorted(
            select_top_m_classes(source_ds, pretrained, episode.support_inputs, asc_cfg.top_m)
        )

    augment = loss_spec.contrastive and episode.k_shot == 1
    n_anchors = None
    if loss_spec.kind == "conft" and loss_spec.anchor_fraction < 1.0:
        count = len(episode.support_labels) * (2 if augment else 1)
        n_anchors = max(1, math.ceil(loss_spec.anchor_fraction * count))

    cls_losses: List[float] = []
    con_losses: List[float] = []
    totals: List[float] = []
    source_batches = 0

    for _ in range(epochs):
        if augment:
            sup_x, sup_y = _two_view_support(episode, cls_rng)
        else:
            sup_x, sup_y = episode.support_inputs, episode.support_labels

        if loss_spec.kind == "cross_entropy":
            l_cls = cross_entropy_loss(head, f_t.forward(sup_x), sup_y)
        elif loss_spec.kind == "supcon":
            l_cls = supcon_loss(
                f_t.forward(sup_x),
                sup_y,
                loss_spec.tau,
                include_self=loss_spec.include_self_in_denominator,
                normalize=loss_spec.normalize,
            )
        else:
            d_batch = sample_source_batch(
                source_ds, cls_rng.integers(2**63), loss_spec.n_distractors
            )
            anchors = None if n_anchors is None else np.arange(n_anchors)
            l_cls = conft_loss(
                f_t.forward(sup_x),
                sup_y,
                f_t.forward(d_batch.inputs),
                loss_spec.tau,
                normalize=loss_spec.normalize,
                anchor_indices=anchors,
            )

        if asc_cfg is not None:
            if asc_cfg.regularization_inputs == "target":
                reg_inputs = episode.support_inputs
                weights = np.ones(len(reg_inputs))
            else:
                batch = sample_source_batch(
                    source_ds, asc_rng.integers(2**63), asc_cfg.batch_b, class_ids=allowed_classes
                )
                source_batches += 1
                reg_inputs = batch.inputs
                if asc_cfg.weights_enabled:
                    proto_encoder = f_t if asc_cfg.prototype_encoder == "target" else f_s
                    proto = support_prototype(proto_encoder, episode.support_inputs)
                    dists = source_target_distances(f_s, reg_inputs, proto)
                    weights = adaptive_weights(dists)
                else:
                    weights = np.ones(len(reg_inputs))
            l_con = consistency_loss(
                f_s, f_t, reg_inputs, weights, block=asc_cfg.regularized_block
            )
            objective = total_loss(l_cls, l_con, asc_cfg.lambda_)
            con_losses.append(_finite(l_con.item(), "consistency loss"))
        else:
            objective = l_cls
            con_losses.append(0.0)

        optimizer.zero_grad()
        objective.backward()
        optimizer.step()
        cls_losses.append(_finite(l_cls.item(), "classification loss"))
        totals.append(_finite(objective.item(), "total loss"))

    return FinetuneResult(
        encoder=f_t,
        head=head,
        cls_losses=cls_losses,
        con_losses=con_losses,
        total_losses=totals,
        parameter_change=block_parameter_change(pretrained, f_t),
        source_batches=source_batches,
    )


def classify_queries(
    encoder: Encoder,
    episode: Episode,
    loss_spec: LossSpec,
    head: Optional[LinearHead] = None,
    metric: str = "euclidean",
) -> np.ndarray:
    """Predicted labels for the query set.

    Cross-entropy finetuning predicts with its learned head; contrastive
    finetuning assigns each query to the nearest support-class prototype.
    """
    if loss_spec.kind == "cross_entropy":
        if head is None:
            raise ContractError("cross-entropy inference needs the finetuned head")
        with no_grad():
            logits = head.forward(encoder.forward(episode.query_inputs)).data
        return logits.argmax(axis=1)

    with no_grad():
        sup = encoder.forward(episode.support_inputs).data
        qry = encoder.forward(episode.query_inputs).data
    protos = np.stack([
        sup[episode.support_labels == c].mean(axis=0) for c in range(episode.n_way)
    ])
    if metric == "cosine":
        protos = protos / np.linalg.norm(protos, axis=1, keepdims=True)
        qry = qry / np.linalg.norm(qry, axis=1, keepdims=True)
        return (qry @ protos.T).argmax(axis=1)
    if metric != "euclidean":
        raise ContractError(f"unknown inference metric {metric!r}")
    d2 = ((qry[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def run_episode(
    pretrained: Encoder,
    source_ds: Optional[Dataset],
    target_ds: Dataset,
    episode_spec: EpisodeSpec,
    cfg: FinetuneConfig,
    entropy: Tuple[int, ...],
    index: int,
) -> Tuple[float, np.ndarray]:
    """Sample, finetune and score one episode; returns (accuracy, block change)."""
    episode = sample_episode(
        target_ds,
        (*entropy, index, 0),
        episode_spec.n_way,
        episode_spec.k_shot,
        episode_spec.n_query,
    )
    result = finetune_episode(
        pretrained,
        episode,
        source_ds,
        cfg.loss,
        cfg.asc,
        cfg.epochs,
        cfg.optimizer,
        (*entropy, index, 1),
    )
    predicted = classify_queries(
        result.encoder, episode, cfg.loss, result.head, cfg.inference_metric
    )
    accuracy = float(np.mean(predicted == episode.query_labels))
    return accuracy, result.parameter_change


def evaluate(
    pretrained: Encoder,
    source_ds: Optional[Dataset],
    target_ds: Dataset,
    episode_spec: EpisodeSpec,
    cfg: FinetuneConfig,
    episodes: int,
    seed,
    jobs: int = 1,
) -> EvalReport:
    """Mean query accuracy and 95% interval over independently seeded episodes."""
    if episodes < 1:
        raise ContractError("episodes must be >= 1")
    entropy = _entropy_tuple(seed)
    worker = partial(run_episode, pretrained, source_ds, target_ds, episode_spec, cfg, entropy)
    if jobs > 1:
        chunk = max(1, episodes // (jobs * 8))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(worker, range(episodes), chunksize=chunk))
    else:
        results = [worker(t) for t in range(episodes)]
    accuracies = [acc for acc, _ in results]
    if any(not math.isfinite(a) for a in accuracies):
        raise NumericError("non-finite episode accuracy")
    mean_change = np.mean([change for _, change in results], axis=0)
    fingerprint = _config_fingerprint(episode_spec, cfg, episodes, entropy, target_ds.domain_tag)
    return EvalReport.from_accuracies(accuracies, fingerprint, mean_change)


def _config_fingerprint(episode_spec, cfg, episodes, entropy, domain_tag) -> str:
    text = repr((episode_spec, cfg.loss, cfg.asc, cfg.epochs, cfg.optimizer,
                 cfg.inference_metric, episodes, entropy, domain_tag))
    return hashlib.sha256(text.encode()).hexdigest()[:12]
