"""Experiment configuration: a sectioned key = value file with strict parsing.

The file format is plain INI (configparser), one section per concern,
every value rendered with full precision so parse(render(config))
round-trips losslessly. Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields
from typing import Optional, Tuple, Union

from .consistency import ASCConfig
from .data import Dataset, DomainPrior, generate_source, generate_target
from .encoder import Encoder
from .errors import ConfigError
from .losses import LossSpec
from .training import EpisodeSpec, OptimizerConfig

import numpy as np


@dataclass
class ExperimentConfig:
    # data
    input_dim: int = 32
    signal_dim: int = 8
    source_classes: int = 64
    source_per_class: int = 60
    target_classes: int = 20
    target_per_class: int = 40
    shift_magnitudes: Tuple[float, ...] = (0.2, 0.4, 0.8, 1.2)
    mean_scale: float = 1.0
    noise_scale: float = 0.5
    nuisance_scale: float = 2.5
    noise_inflation: float = 0.5
    # model
    hidden_dims: Tuple[int, ...] = (64, 64, 64, 64)
    feature_dim: int = 64
    # episode
    n_way: int = 5
    k_shot: int = 5
    n_query: int = 15
    # loss
    loss_kind: str = "supcon"
    tau: float = 0.05
    include_self_in_denominator: bool = True
    normalize_features: bool = True
    n_distractors: int = 16
    anchor_fraction: float = 1.0
    # asc
    lambda_: float = 1.0
    batch_b: int = 64
    weights_enabled: bool = True
    regularized_block: Union[int, str] = "semantic"
    regularization_inputs: str = "source"
    top_m: Optional[int] = None
    prototype_encoder: str = "target"
    # train
    pretrain_epochs: int = 100
    pretrain_lr: float = 0.05
    pretrain_batch: int = 64
    finetune_epochs: int = 30
    lr_cross_entropy: float = 0.05
    lr_contrastive: float = 5e-3
    # eval
    episodes: int = 100
    methods: Tuple[str, ...] = ("cross_entropy", "conft", "supcon")
    seed: int = 0
    jobs: int = 1
    inference_metric: str = "euclidean"


_SECTIONS = {
    "data": (
        "input_dim", "signal_dim", "source_classes", "source_per_class",
        "target_classes", "target_per_class", "shift_magnitudes", "mean_scale",
        "noise_scale", "nuisance_scale", "noise_inflation",
    ),
    "model": ("hidden_dims", "feature_dim"),
    "episode": ("n_way", "k_shot", "n_query"),
    "loss": (
        "loss_kind", "tau", "include_self_in_denominator", "normalize_features",
        "n_distractors", "anchor_fraction",
    ),
    "asc": (
        "lambda_", "batch_b", "weights_enabled", "regularized_block",
        "regularization_inputs", "top_m", "prototype_encoder",
    ),
    "train": (
        "pretrain_epochs", "pretrain_lr", "pretrain_batch", "finetune_epochs",
        "lr_cross_entropy", "lr_contrastive",
    ),
    "eval": ("episodes", "methods", "seed", "jobs", "inference_metric"),
}

# keys are written without the trailing underscore python needs
_KEY_NAMES = {"lambda_": "lambda"}
_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _render_value(name: str, value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_render_value(name, v) for v in value)
    return str(value)


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if name == "shift_magnitudes":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if name == "hidden_dims":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if name == "methods":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if name == "top_m":
        return None if raw.lower() == "none" else int(raw)
    if name == "regularized_block":
        return raw if raw in ("semantic", "all") else int(raw)
    kind = _FIELD_TYPES[name]
    if kind == "bool":
        if raw.lower() in ("true", "yes", "on", "1"):
            return True
        if raw.lower() in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def render_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, names in _SECTIONS.items():
        lines.append(f"[{section}]")
        for name in names:
            key = _KEY_NAMES.get(name, name)
            lines.append(f"{key} = {_render_value(name, getattr(cfg, name))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from None

    reverse_keys = {v: k for k, v in _KEY_NAMES.items()}
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTIONS[section]
        for key, raw in parser.items(section):
            name = reverse_keys.get(key, key)
            if name not in allowed:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                values[name] = _parse_value(name, raw)
            except (ValueError, TypeError) as err:
                raise ConfigError(f"bad value for {key!r}: {err}") from None
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.loss_kind not in ("cross_entropy", "conft", "supcon"):
        raise ConfigError(f"unknown loss kind {cfg.loss_kind!r}")
    for m in cfg.methods:
        if m not in ("cross_entropy", "conft", "supcon"):
            raise ConfigError(f"unknown method {m!r}")
    if cfg.episodes < 1:
        raise ConfigError("episodes must be >= 1")
    if cfg.k_shot + cfg.n_query > cfg.target_per_class:
        raise ConfigError("k_shot + n_query exceeds target per-class count")
    if isinstance(cfg.regularized_block, int) and not (
        1 <= cfg.regularized_block <= len(cfg.hidden_dims) + 1
    ):
        raise ConfigError("regularized_block outside the encoder's block range")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        fh.write(render_config(cfg))


def config_fingerprint(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(render_config(cfg).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# builders shared by the CLI and the test harness


def domain_prior(cfg: ExperimentConfig, seed: Optional[int] = None) -> DomainPrior:
    master = cfg.seed if seed is None else seed
    basis_seed = int(np.random.SeedSequence([master, 7]).generate_state(1)[0])
    return DomainPrior(
        input_dim=cfg.input_dim,
        signal_dim=cfg.signal_dim,
        mean_scale=cfg.mean_scale,
        noise_scale=cfg.noise_scale,
        nuisance_scale=cfg.nuisance_scale,
        noise_inflation=cfg.noise_inflation,
        basis_seed=basis_seed,
    )


def build_source(cfg: ExperimentConfig, seed: Optional[int] = None) -> Dataset:
    master = cfg.seed if seed is None else seed
    return generate_source(
        [master, 11], cfg.source_classes, cfg.source_per_class, cfg.input_dim,
        prior=domain_prior(cfg, seed),
    )


def build_targets(cfg: ExperimentConfig, seed: Optional[int] = None):
    master = cfg.seed if seed is None else seed
    prior = domain_prior(cfg, seed)
    return [
        generate_target([master, 13, i], prior, cfg.target_classes, cfg.target_per_class, s)
        for i, s in enumerate(cfg.shift_magnitudes)
    ]


def build_encoder(cfg: ExperimentConfig, seed: Optional[int] = None) -> Encoder:
    master = cfg.seed if seed is None else seed
    rng = np.random.default_rng([master, 17])
    return Encoder.initialize(rng, cfg.input_dim, cfg.hidden_dims, cfg.feature_dim)


def loss_spec_for(cfg: ExperimentConfig, kind: Optional[str] = None) -> LossSpec:
    return LossSpec(
        kind=kind or cfg.loss_kind,
        tau=cfg.tau,
        include_self_in_denominator=cfg.include_self_in_denominator,
        normalize=cfg.normalize_features,
        n_distractors=cfg.n_distractors,
        anchor_fraction=cfg.anchor_fraction,
    )


def asc_config_for(cfg: ExperimentConfig, **overrides) -> ASCConfig:
    base = dict(
        lambda_=cfg.lambda_,
        batch_b=cfg.batch_b,
        regularized_block=cfg.regularized_block,
        regularization_inputs=cfg.regularization_inputs,
        top_m=cfg.top_m,
        weights_enabled=cfg.weights_enabled,
        prototype_encoder=cfg.prototype_encoder,
    )
    base.update(overrides)
    return ASCConfig(**base)


def optimizer_for(cfg: ExperimentConfig, kind: str) -> OptimizerConfig:
    if kind == "cross_entropy":
        return OptimizerConfig("sgd", cfg.lr_cross_entropy)
    return OptimizerConfig("adam", cfg.lr_contrastive)


def episode_spec_for(cfg: ExperimentConfig) -> EpisodeSpec:
    return EpisodeSpec(n_way=cfg.n_way, k_shot=cfg.k_shot, n_query=cfg.n_query)
