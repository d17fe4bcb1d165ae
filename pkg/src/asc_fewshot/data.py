"""Synthetic source/target domains with a scalar shift knob, plus samplers.

Classes are Gaussian: class means live in a low-dimensional *signal*
subspace shared by every domain, and within-class noise is anisotropic —
mild along the signal directions, large along the orthogonal *nuisance*
directions. Learning to project out the nuisance is the transferable
knowledge a source-pretrained encoder carries; a handful of support
vectors cannot re-identify the subspace on their own.

A target domain re-draws means from the same prior (so its label space
is disjoint from the source by construction) and pushes every sample
through a fixed seeded affine transform — rotation, per-dimension
scaling, bias — whose distance from the identity grows with the shift
magnitude ``s``; within-class noise is inflated by the same knob. ``s``
therefore plays the role of a near-domain/far-domain dial.

All generation is a pure function of (seed, arguments); repeated calls
agree bit-exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from .errors import CapacityError, ContractError, FormatError

DATASET_MAGIC = "ASCDATA"
DATASET_VERSION = "v1"

ROTATION_SCALE = 1.0
BIAS_SCALE = 1.0


@dataclass(frozen=True)
class DomainPrior:
    """Shared generative family for class means and within-class noise."""

    input_dim: int = 32
    signal_dim: int = 8
    mean_scale: float = 1.0
    noise_scale: float = 0.5
    nuisance_scale: float = 2.5
    noise_inflation: float = 0.5
    basis_seed: int = 7777

    def __post_init__(self):
        if not 1 <= self.signal_dim <= self.input_dim:
            raise ContractError("signal_dim must lie in [1, input_dim]")

    def bases(self) -> Tuple[np.ndarray, np.ndarray]:
        """Orthonormal signal and nuisance bases, fixed by the prior's seed."""
        rng = np.random.default_rng(self.basis_seed)
        q, _ = np.linalg.qr(rng.normal(size=(self.input_dim, self.input_dim)))
        return q[:, : self.signal_dim], q[:, self.signal_dim:]


@dataclass(frozen=True)
class DomainTransform:
    """Invertible affine map: x -> scale * (R x) + bias, applied row-wise."""

    rotation: np.ndarray
    scale: np.ndarray
    bias: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x @ self.rotation.T) * self.scale + self.bias

    def invert(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.bias) / self.scale) @ self.rotation


@dataclass
class Dataset:
    """Labeled vectors for one domain; immutable after generation."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    per_class: int
    domain_tag: str
    shift_magnitude: float
    transform: Optional[DomainTransform] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise ContractError("dataset inputs and labels disagree in length")
        present = np.unique(self.labels)
        if len(present) != self.num_classes or present[0] != 0 or present[-1] != self.num_classes - 1:
            raise ContractError("class ids must form the contiguous range [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def class_indices(self, class_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == class_id)


@dataclass
class Episode:
    """One N-way K-shot task: disjoint support and query sets, labels re-indexed to [0, N)."""

    support_inputs: np.ndarray
    support_labels: np.ndarray
    query_inputs: np.ndarray
    query_labels: np.ndarray
    n_way: int
    k_shot: int
    n_query: int
    class_ids: np.ndarray  # original dataset class id for each episode label
    shift_magnitude: float = 0.0


@dataclass
class SourceBatch:
    """Unlabeled source rows reused during finetuning."""

    inputs: np.ndarray

    def __len__(self) -> int:
        return len(self.inputs)


def make_domain_transform(seed, input_dim: int, shift_magnitude: float) -> DomainTransform:
    """Fixed seeded transform whose distance from identity scales with the shift.

    The rotation is exp(s * A) for a seeded skew-symmetric A, so it is
    orthogonal for every s and equals the identity at s = 0. Scaling is
    per-dimension in [1-s, 1+s] and the bias is proportional to s.
    """
    rng = np.random.default_rng(seed)
    s = float(shift_magnitude)
    d = int(input_dim)
    g = rng.normal(size=(d, d))
    skew = (g - g.T) / (2.0 * np.sqrt(d))
    rotation = np.eye(d) if s == 0.0 else expm(s * ROTATION_SCALE * skew)
    scale = 1.0 + s * rng.uniform(-1.0, 1.0, size=d)
    bias = s * BIAS_SCALE * rng.normal(size=d)
    return DomainTransform(rotation=rotation, scale=scale, bias=bias)


def _draw_domain(rng, prior: DomainPrior, num_classes, per_class, inflation: float):
    """Means in the signal subspace, anisotropic within-class noise around them."""
    signal_basis, nuisance_basis = prior.bases()
    coords = rng.normal(0.0, prior.mean_scale, size=(num_classes, prior.signal_dim))
    means = coords @ signal_basis.T
    inputs = np.empty((num_classes * per_class, prior.input_dim))
    labels = np.repeat(np.arange(num_classes), per_class)
    sig_std = prior.noise_scale * inflation
    nui_std = prior.nuisance_scale * inflation
    for c in range(num_classes):
        sig = rng.normal(0.0, sig_std, size=(per_class, prior.signal_dim))
        nui = rng.normal(0.0, nui_std, size=(per_class, prior.input_dim - prior.signal_dim))
        inputs[c * per_class:(c + 1) * per_class] = (
            means[c] + sig @ signal_basis.T + nui @ nuisance_basis.T
        )
    return inputs, labels


def generate_source(
    seed,
    num_classes: int = 64,
    per_class: int = 60,
    input_dim: int = 32,
    prior: Optional[DomainPrior] = None,
) -> Dataset:
    """Source domain: class-conditional Gaussians, no shift."""
    if num_classes <= 0 or per_class <= 0 or input_dim <= 0:
        raise ContractError("num_classes, per_class and input_dim must be positive")
    if prior is None:
        prior = DomainPrior(input_dim=input_dim)
    elif prior.input_dim != input_dim:
        raise ContractError(f"prior input_dim {prior.input_dim} != requested {input_dim}")
    rng = np.random.default_rng(seed)
    inputs, labels = _draw_domain(rng, prior, num_classes, per_class, inflation=1.0)
    return Dataset(inputs, labels, num_classes, per_class, "source", 0.0)


def generate_target(
    seed,
    prior: DomainPrior,
    num_classes: int = 20,
    per_class: int = 40,
    shift_magnitude: float = 0.0,
    domain_tag: Optional[str] = None,
) -> Dataset:
    """Target domain: fresh class means from the shared prior, then the domain transform.

    Class ids live in their own [0, num_classes) space; disjointness from
    the source label set comes from the independent mean draws per domain.
    """
    if shift_magnitude < 0:
        raise ContractError("shift_magnitude must be >= 0")
    if num_classes <= 0 or per_class <= 0:
        raise ContractError("num_classes and per_class must be positive")
    s = float(shift_magnitude)
    draw_seed, transform_seed = _seed_sequence(seed).spawn(2)
    rng = np.random.default_rng(draw_seed)
    inflation = 1.0 + prior.noise_inflation * s
    base, labels = _draw_domain(rng, prior, num_classes, per_class, inflation)
    transform = make_domain_transform(transform_seed, prior.input_dim, s)
    tag = domain_tag if domain_tag is not None else f"target-s{s:g}"
    return Dataset(transform.apply(base), labels, num_classes, per_class, tag, s, transform=transform)


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (int, np.integer)):
        return np.random.SeedSequence(int(seed))
    return np.random.SeedSequence([int(v) for v in seed])


def sample_episode(ds: Dataset, seed, n_way: int, k_shot: int, n_query: int) -> Episode:
    """Draw one N-way K-shot episode with disjoint support and query sets."""
    if ds.num_classes < n_way:
        raise CapacityError(f"dataset has {ds.num_classes} classes, episode needs {n_way}")
    if ds.per_class < k_shot + n_query:
        raise CapacityError(
            f"classes hold {ds.per_class} samples, episode needs {k_shot}+{n_query} per class"
        )
    rng = np.random.default_rng(seed)
    classes = rng.choice(ds.num_classes, size=n_way, replace=False)
    support_rows, query_rows = [], []
    for c in classes:
        idx = rng.choice(ds.class_indices(int(c)), size=k_shot + n_query, replace=False)
        support_rows.append(idx[:k_shot])
        query_rows.append(idx[k_shot:])
    support_idx = np.concatenate(support_rows)
    query_idx = np.concatenate(query_rows)
    return Episode(
        support_inputs=ds.inputs[support_idx].copy(),
        support_labels=np.repeat(np.arange(n_way), k_shot),
        query_inputs=ds.inputs[query_idx].copy(),
        query_labels=np.repeat(np.arange(n_way), n_query),
        n_way=n_way,
        k_shot=k_shot,
        n_query=n_query,
        class_ids=classes.astype(np.int64),
        shift_magnitude=ds.shift_magnitude,
    )


def sample_source_batch(
    ds: Dataset, seed, batch_size: int, class_ids: Optional[Sequence[int]] = None
) -> SourceBatch:
    """Uniform draw of batch_size rows without replacement, labels discarded.

    ``class_ids`` optionally restricts the pool (top-m similarity
    regularization samples only from the selected source classes).
    """
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    if class_ids is None:
        pool = len(ds)
        if batch_size > pool:
            raise CapacityError(f"batch of {batch_size} exceeds dataset size {pool}")
        idx = np.random.default_rng(seed).choice(pool, size=batch_size, replace=False)
        return SourceBatch(ds.inputs[idx].copy())
    allowed = np.flatnonzero(np.isin(ds.labels, np.asarray(sorted(class_ids), dtype=np.int64)))
    if batch_size > len(allowed):
        raise CapacityError(f"batch of {batch_size} exceeds restricted pool of {len(allowed)}")
    idx = np.random.default_rng(seed).choice(allowed, size=batch_size, replace=False)
    return SourceBatch(ds.inputs[idx].copy())


def augmentation_sigma(shift_magnitude: float) -> float:
    """Vector-space jitter scale standing in for image augmentation."""
    return 0.05 * float(shift_magnitude) + 0.02


def jitter(inputs: np.ndarray, rng: np.random.Generator, sigma: float) -> np.ndarray:
    return inputs + rng.normal(0.0, sigma, size=inputs.shape)


# ---------------------------------------------------------------------------
# dataset file format


def save_dataset(path, ds: Dataset) -> None:
    """Text format: one header line, then one `class_id v_1 ... v_d` line per sample."""
    with open(path, "w") as fh:
        fh.write(
            f"{DATASET_MAGIC} {DATASET_VERSION} {ds.num_classes} {ds.per_class} "
            f"{ds.input_dim} {ds.shift_magnitude:.17g}\n"
        )
        for label, row in zip(ds.labels, ds.inputs):
            fh.write(f"{int(label)} " + " ".join(f"{v:.17g}" for v in row) + "\n")


def load_dataset(path, domain_tag: Optional[str] = None) -> Dataset:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6 or header[0] != DATASET_MAGIC or header[1] != DATASET_VERSION:
            raise FormatError(f"{path}: not a {DATASET_MAGIC} {DATASET_VERSION} file")
        try:
            num_classes, per_class, input_dim = (int(v) for v in header[2:5])
            shift = float(header[5])
        except ValueError as err:
            raise FormatError(f"{path}: malformed header: {err}") from None
        labels, rows = [], []
        for line_no, line in enumerate(fh, start=2):
            parts = line.split()
            if len(parts) != input_dim + 1:
                raise FormatError(f"{path}:{line_no}: expected {input_dim + 1} fields, got {len(parts)}")
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    if len(rows) != num_classes * per_class:
        raise FormatError(f"{path}: sample count {len(rows)} does not match header")
    tag = domain_tag if domain_tag is not None else "loaded"
    return Dataset(np.array(rows), np.array(labels), num_classes, per_class, tag, shift)
