"""Scikit-learn style estimators wrapping the training loops.

``SourcePretrainer`` fits an encoder on the labeled source domain and
then acts as a feature transformer. ``ConsistencyFinetuneClassifier``
takes that pretrained encoder, finetunes a clone on a small support set
(one ``fit`` call per episode) under the chosen classification loss and
the optional consistency regularizer, and predicts query labels. Both
follow the fit/transform/predict and get_params conventions, so they
compose with sklearn's ``clone``, pipelines and model selection.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .autodiff import no_grad
from .consistency import ASCConfig
from .data import Dataset, Episode
from .encoder import Encoder, LinearHead
from .errors import ContractError
from .losses import LossSpec
from .training import (
    FinetuneConfig,
    OptimizerConfig,
    classify_queries,
    finetune_episode,
    _pretrain_loop,
)
from .validation import check_labels, check_matrix

DEFAULT_LR = {"cross_entropy": 0.05, "conft": 5e-3, "supcon": 5e-3}
DEFAULT_OPTIMIZER = {"cross_entropy": "sgd", "conft": "adam", "supcon": "adam"}


class SourcePretrainer(BaseEstimator, TransformerMixin):
    """Pretrains a block MLP encoder with cross-entropy on the source domain."""

    def __init__(
        self,
        hidden_dims=(64, 64, 64, 64),
        feature_dim=64,
        epochs=100,
        learning_rate=0.05,
        batch_size=64,
        seed=0,
    ):
        self.hidden_dims = hidden_dims
        self.feature_dim = feature_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_labels(y, len(X))
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        rng = np.random.default_rng([int(self.seed), 17])
        self.encoder_ = Encoder.initialize(
            rng, input_dim=X.shape[1], hidden_dims=tuple(self.hidden_dims),
            feature_dim=int(self.feature_dim),
        )
        self.head_ = LinearHead.initialize(rng, len(self.classes_), int(self.feature_dim))
        self.train_accuracy_ = _pretrain_loop(
            X, y_idx, self.encoder_, self.head_,
            int(self.epochs), float(self.learning_rate), [int(self.seed), 19],
            int(self.batch_size),
        )
        return self

    def transform(self, X):
        self._check_fitted()
        X = check_matrix(X, n_cols=self.encoder_.input_dim)
        with no_grad():
            return self.encoder_.forward(X).data

    def _check_fitted(self):
        if not hasattr(self, "encoder_"):
            raise NotFittedError("SourcePretrainer is not fitted yet; call fit first")


class ConsistencyFinetuneClassifier(BaseEstimator, ClassifierMixin):
    """Episode classifier: finetune a pretrained encoder on a support set, predict queries.

    ``encoder`` is the pretrained model (for instance
    ``SourcePretrainer(...).fit(...).encoder_``); ``source_data`` is the
    source-domain ``Dataset`` reused by the regularizer and by the
    distractor-contrastive loss. With ``regularize=False`` the estimator
    runs the plain finetuning baseline.
    """

    def __init__(
        self,
        encoder: Optional[Encoder] = None,
        source_data: Optional[Dataset] = None,
        loss: str = "supcon",
        tau: float = 0.05,
        regularize: bool = True,
        lambda_: float = 1.0,
        batch_b: int = 64,
        weights_enabled: bool = True,
        regularized_block="semantic",
        regularization_inputs: str = "source",
        top_m: Optional[int] = None,
        prototype_encoder: str = "target",
        include_self_in_denominator: bool = True,
        normalize_features: bool = True,
        n_distractors: int = 16,
        anchor_fraction: float = 1.0,
        epochs: int = 30,
        learning_rate: Optional[float] = None,
        optimizer: str = "auto",
        inference_metric: str = "euclidean",
        shift_magnitude: float = 0.0,
        seed: int = 0,
    ):
        self.encoder = encoder
        self.source_data = source_data
        self.loss = loss
        self.tau = tau
        self.regularize = regularize
        self.lambda_ = lambda_
        self.batch_b = batch_b
        self.weights_enabled = weights_enabled
        self.regularized_block = regularized_block
        self.regularization_inputs = regularization_inputs
        self.top_m = top_m
        self.prototype_encoder = prototype_encoder
        self.include_self_in_denominator = include_self_in_denominator
        self.normalize_features = normalize_features
        self.n_distractors = n_distractors
        self.anchor_fraction = anchor_fraction
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.inference_metric = inference_metric
        self.shift_magnitude = shift_magnitude
        self.seed = seed

    def _finetune_config(self) -> FinetuneConfig:
        loss_spec = LossSpec(
            kind=self.loss,
            tau=float(self.tau),
            include_self_in_denominator=bool(self.include_self_in_denominator),
            normalize=bool(self.normalize_features),
            n_distractors=int(self.n_distractors),
            anchor_fraction=float(self.anchor_fraction),
        )
        asc = None
        if self.regularize:
            asc = ASCConfig(
                lambda_=float(self.lambda_),
                batch_b=int(self.batch_b),
                regularized_block=self.regularized_block,
                regularization_inputs=self.regularization_inputs,
                top_m=self.top_m,
                weights_enabled=bool(self.weights_enabled),
                prototype_encoder=self.prototype_encoder,
            )
        kind = DEFAULT_OPTIMIZER[self.loss] if self.optimizer == "auto" else self.optimizer
        lr = DEFAULT_LR[self.loss] if self.learning_rate is None else float(self.learning_rate)
        return FinetuneConfig(
            loss=loss_spec,
            asc=asc,
            epochs=int(self.epochs),
            optimizer=OptimizerConfig(kind, lr),
            inference_metric=self.inference_metric,
        )

    def fit(self, X, y):
        if self.encoder is None:
            raise ContractError("a pretrained encoder is required; fit a SourcePretrainer first")
        X = check_matrix(X, n_cols=self.encoder.input_dim)
        y = check_labels(y, len(X))
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        counts = np.bincount(y_idx)
        episode = Episode(
            support_inputs=X,
            support_labels=y_idx,
            query_inputs=X[:0],
            query_labels=y_idx[:0],
            n_way=len(self.classes_),
            k_shot=int(counts.min()),
            n_query=0,
            class_ids=np.arange(len(self.classes_)),
            shift_magnitude=float(self.shift_magnitude),
        )
        cfg = self._finetune_config()
        result = finetune_episode(
            self.encoder, episode, self.source_data, cfg.loss, cfg.asc,
            cfg.epochs, cfg.optimizer, int(self.seed),
        )
        self.encoder_ = result.encoder
        self.head_ = result.head
        self.episode_ = episode
        self.config_ = cfg
        self.diagnostics_ = {
            "cls_losses": result.cls_losses,
            "con_losses": result.con_losses,
            "total_losses": result.total_losses,
            "parameter_change": result.parameter_change,
            "source_batches": result.source_batches,
        }
        return self

    def predict(self, X):
        if not hasattr(self, "encoder_"):
            raise NotFittedError("ConsistencyFinetuneClassifier is not fitted yet; call fit first")
        X = check_matrix(X, n_cols=self.encoder_.input_dim)
        episode = Episode(
            support_inputs=self.episode_.support_inputs,
            support_labels=self.episode_.support_labels,
            query_inputs=X,
            query_labels=np.zeros(len(X), dtype=np.int64),
            n_way=self.episode_.n_way,
            k_shot=self.episode_.k_shot,
            n_query=len(X),
            class_ids=self.episode_.class_ids,
            shift_magnitude=self.episode_.shift_magnitude,
        )
        indices = classify_queries(
            self.encoder_, episode, self.config_.loss, self.head_, self.inference_metric
        )
        return self.classes_[indices]
