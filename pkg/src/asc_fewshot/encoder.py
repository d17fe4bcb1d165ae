"""Block-structured feedforward encoder and linear classifier head.

The encoder is a chain of affine blocks with relu between them; the
final block omits the relu so features can occupy all of feature space.
It supports per-block introspection (for block-level regularization and
parameter-change diagnostics) and cloning into a frozen copy whose
parameters never receive gradients.
"""
from __future__ import annotations

import hashlib
from typing import List, Sequence, Union

import numpy as np

from .autodiff import Tensor, add, broadcast_rows, matmul, relu, transpose
from .errors import ContractError, ShapeError


class EncoderBlock:
    """One affine transform (weight is out x in) with an optional relu."""

    __slots__ = ("weight", "bias", "apply_relu")

    def __init__(self, weight: Tensor, bias: Tensor, apply_relu: bool):
        if weight.ndim != 2 or bias.ndim != 1 or weight.shape[0] != bias.shape[0]:
            raise ShapeError(
                f"block expects weight (out, in) and bias (out,), got {weight.shape} and {bias.shape}"
            )
        self.weight = weight
        self.bias = bias
        self.apply_relu = apply_relu

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


class Encoder:
    """Sequence of affine(+relu) blocks mapping inputs to feature vectors."""

    def __init__(self, blocks: Sequence[EncoderBlock]):
        if not blocks:
            raise ContractError("encoder needs at least one block")
        for prev, nxt in zip(blocks, blocks[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"block dims do not chain: {prev.out_dim} feeds a block expecting {nxt.in_dim}"
                )
        self.blocks: List[EncoderBlock] = list(blocks)

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        input_dim: int = 32,
        hidden_dims: Sequence[int] = (64, 64, 64, 64),
        feature_dim: int = 64,
    ) -> "Encoder":
        """He-initialized encoder: weight scale sqrt(2/in), zero biases."""
        dims = [int(input_dim)] + [int(h) for h in hidden_dims] + [int(feature_dim)]
        blocks = []
        for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
            weight = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
            blocks.append(
                EncoderBlock(
                    Tensor(weight, requires_grad=True),
                    Tensor(np.zeros(d_out), requires_grad=True),
                    apply_relu=i < len(dims) - 2,
                )
            )
        return cls(blocks)

    @property
    def input_dim(self) -> int:
        return self.blocks[0].in_dim

    @property
    def feature_dim(self) -> int:
        return self.blocks[-1].out_dim

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def layer_dims(self) -> tuple:
        """Dimension chain: input dim followed by each block's output dim."""
        return (self.blocks[0].in_dim,) + tuple(b.out_dim for b in self.blocks)

    def parameters(self) -> List[Tensor]:
        params: List[Tensor] = []
        for block in self.blocks:
            params.append(block.weight)
            params.append(block.bias)
        return params

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def _coerce_input(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if t.ndim != 2 or t.shape[1] != self.input_dim:
            raise ShapeError(
                f"encoder expects a batch of shape (n, {self.input_dim}), got {t.shape}"
            )
        return t

    def forward_blocks(self, x: Union[Tensor, np.ndarray]) -> List[Tensor]:
        """Every block's output batch, in order; the last is the feature batch."""
        h = self._coerce_input(x)
        n = h.shape[0]
        outputs: List[Tensor] = []
        for block in self.blocks:
            h = add(matmul(h, transpose(block.weight)), broadcast_rows(block.bias, n))
            if block.apply_relu:
                h = relu(h)
            outputs.append(h)
        return outputs

    def forward(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        return self.forward_blocks(x)[-1]

    def clone(self, trainable: bool = False) -> "Encoder":
        """Deep copy; pass trainable=False for a frozen reference model."""
        blocks = [
            EncoderBlock(
                Tensor(b.weight.data.copy(), requires_grad=trainable),
                Tensor(b.bias.data.copy(), requires_grad=trainable),
                b.apply_relu,
            )
            for b in self.blocks
        ]
        return Encoder(blocks)


def clone_frozen(encoder: Encoder) -> Encoder:
    """Frozen deep copy: parameters excluded from every gradient update."""
    return encoder.clone(trainable=False)


def _check_same_architecture(before: Encoder, after: Encoder) -> None:
    if before.layer_dims != after.layer_dims:
        raise ContractError(
            f"encoder architectures differ: {before.layer_dims} vs {after.layer_dims}"
        )


def block_parameter_change(before: Encoder, after: Encoder) -> np.ndarray:
    """Per-block mean squared parameter difference between two encoders."""
    _check_same_architecture(before, after)
    changes = []
    for b_blk, a_blk in zip(before.blocks, after.blocks):
        dw = (a_blk.weight.data - b_blk.weight.data).ravel()
        db = (a_blk.bias.data - b_blk.bias.data).ravel()
        diff = np.concatenate([dw, db])
        changes.append(float(np.mean(diff * diff)))
    return np.array(changes)


def parameter_checksum(encoder: Encoder) -> str:
    """SHA-256 over architecture dims and raw parameter bytes."""
    digest = hashlib.sha256()
    digest.update(repr(encoder.layer_dims).encode())
    for p in encoder.parameters():
        digest.update(p.data.tobytes())
    return digest.hexdigest()


class LinearHead:
    """Linear classifier on top of encoder features."""

    def __init__(self, weight: Tensor, bias: Tensor):
        if weight.ndim != 2 or bias.ndim != 1 or weight.shape[0] != bias.shape[0]:
            raise ShapeError(
                f"head expects weight (classes, features) and bias (classes,), got {weight.shape} and {bias.shape}"
            )
        self.weight = weight
        self.bias = bias

    @classmethod
    def initialize(cls, rng: np.random.Generator, num_classes: int, feature_dim: int) -> "LinearHead":
        weight = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(num_classes, feature_dim))
        return cls(Tensor(weight, requires_grad=True), Tensor(np.zeros(num_classes), requires_grad=True))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def forward(self, features: Tensor) -> Tensor:
        """Logits for a batch of feature vectors; output length is num_classes."""
        if features.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ShapeError(
                f"head expects features of shape (n, {self.feature_dim}), got {features.shape}"
            )
        n = features.shape[0]
        return add(matmul(features, transpose(self.weight)), broadcast_rows(self.bias, n))

    def clone(self, trainable: bool = False) -> "LinearHead":
        return LinearHead(
            Tensor(self.weight.data.copy(), requires_grad=trainable),
            Tensor(self.bias.data.copy(), requires_grad=trainable),
        )
