"""Command-line front end: pretrain, evaluate, ablate, report.

Exit codes are stable for scripting: 0 success, 2 usage/config error,
3 I/O or file-format error, 4 numeric failure (NaN detected). The
ASC_LOG environment variable (quiet, info, debug) controls verbosity.
All randomness derives from one --seed value (or the config's seed).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

from . import config as cfgmod
from .config import ExperimentConfig
from .encoder import Encoder, LinearHead, parameter_checksum
from .errors import (
    ASCError,
    CompatibilityError,
    ConfigError,
    FormatError,
    NumericError,
)
from .io import ResultRow, load_checkpoint, read_results, save_checkpoint, write_parameter_change, write_results
from .report import build_comparison, render_comparison
from .training import FinetuneConfig, evaluate, pretrain

import numpy as np

logger = logging.getLogger("asc_fewshot")

_CANONICAL_METHODS = ("cross_entropy", "conft", "supcon")
_CELL_SALT = 23

BATCH_SIZE_SWEEP = (4, 8, 16, 32, 64, 128, 256)
TOP_M_SWEEP = (4, 8, 12, 16, 24)


def _setup_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("ASC_LOG", "info"), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return cfgmod.load_config(path)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "episodes", None) is not None:
        cfg.episodes = args.episodes
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    cfgmod.validate_config(cfg)
    return cfg


def _load_compatible_encoder(path, cfg: ExperimentConfig) -> Encoder:
    encoder = load_checkpoint(path)
    expected = (cfg.input_dim,) + tuple(cfg.hidden_dims) + (cfg.feature_dim,)
    if encoder.layer_dims != expected:
        raise CompatibilityError(
            f"checkpoint dims {encoder.layer_dims} do not match config dims {expected}"
        )
    return encoder


def _cell_config(cfg: ExperimentConfig, method: str, asc_on: bool, **asc_overrides) -> FinetuneConfig:
    return FinetuneConfig(
        loss=cfgmod.loss_spec_for(cfg, method),
        asc=cfgmod.asc_config_for(cfg, **asc_overrides) if asc_on else None,
        epochs=cfg.finetune_epochs,
        optimizer=cfgmod.optimizer_for(cfg, method),
        inference_metric=cfg.inference_metric,
    )


def _run_cell(cfg, encoder, source_ds, target_ds, method, domain_index, cell: FinetuneConfig):
    """Evaluate one grid cell; episode seeds ignore the asc flag so cells pair."""
    entropy = (cfg.seed, _CELL_SALT, _CANONICAL_METHODS.index(method), domain_index)
    start = time.perf_counter()
    report = evaluate(
        encoder, source_ds, target_ds, cfgmod.episode_spec_for(cfg), cell,
        cfg.episodes, entropy, jobs=cfg.jobs,
    )
    wall = time.perf_counter() - start
    asc = cell.asc
    row = ResultRow(
        method=method,
        asc=asc is not None,
        domain=target_ds.domain_tag,
        shift=target_ds.shift_magnitude,
        n_way=cfg.n_way,
        k_shot=cfg.k_shot,
        episodes=cfg.episodes,
        mean_acc=report.mean_accuracy,
        ci95=report.ci95,
        lambda_=asc.lambda_ if asc else 0.0,
        batch_b=asc.batch_b if asc else 0,
        top_m=asc.top_m if asc else None,
        reg_block=asc.regularized_block if asc else "semantic",
        seed=cfg.seed,
        wall_time_s=wall,
    )
    logger.info(
        "%s asc=%s %s: %.4f +/- %.4f (%.1fs)",
        method, row.asc, target_ds.domain_tag, row.mean_acc, row.ci95, wall,
    )
    return row, report


def cmd_pretrain(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    source_ds = cfgmod.build_source(cfg)
    encoder = cfgmod.build_encoder(cfg)
    head = LinearHead.initialize(
        np.random.default_rng([cfg.seed, 18]), cfg.source_classes, cfg.feature_dim
    )
    logger.info("pretraining %d epochs on %d source samples", cfg.pretrain_epochs, len(source_ds))
    accuracy = pretrain(
        source_ds, encoder, head, cfg.pretrain_epochs, cfg.pretrain_lr,
        [cfg.seed, 19], cfg.pretrain_batch,
    )
    save_checkpoint(args.out, encoder)
    print(f"source train accuracy: {accuracy:.4f}")
    print(f"checkpoint written to {args.out} (sha256 {parameter_checksum(encoder)[:12]})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    encoder = _load_compatible_encoder(args.checkpoint, cfg)
    source_ds = cfgmod.build_source(cfg)
    targets = cfgmod.build_targets(cfg)
    rows: List[ResultRow] = []
    for method in cfg.methods:
        for asc_on in (False, True):
            for di, target_ds in enumerate(targets):
                cell = _cell_config(cfg, method, asc_on)
                row, _ = _run_cell(cfg, encoder, source_ds, target_ds, method, di, cell)
                rows.append(row)
    write_results(args.out, rows)
    print(f"wrote {len(rows)} result rows to {args.out}")
    return 0


def _param_change_path(out: str) -> Path:
    path = Path(out)
    return path.with_name(path.stem + "_param_change" + (path.suffix or ".csv"))


def cmd_ablate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    encoder = _load_compatible_encoder(args.checkpoint, cfg)
    source_ds = cfgmod.build_source(cfg)
    targets = cfgmod.build_targets(cfg)
    method = cfg.loss_kind
    rows: List[ResultRow] = []
    change_rows = []

    def run(domain_index, target_ds, cell, setting=None):
        row, report = _run_cell(cfg, encoder, source_ds, target_ds, method, domain_index, cell)
        rows.append(row)
        if setting is not None:
            change_rows.append((target_ds.domain_tag, setting, report.mean_parameter_change))

    if args.study == "weights":
        for di, target_ds in enumerate(targets):
            for enabled in (False, True):
                run(di, target_ds, _cell_config(cfg, method, True, weights_enabled=enabled))
    elif args.study == "block":
        n_blocks = len(cfg.hidden_dims) + 1
        settings = list(range(1, n_blocks + 1)) + ["all", "semantic"]
        for di, target_ds in enumerate(targets):
            for block in settings:
                cell = _cell_config(cfg, method, True, regularized_block=block)
                run(di, target_ds, cell, setting=str(block))
    elif args.study == "batch_size":
        for di, target_ds in enumerate(targets):
            for b in BATCH_SIZE_SWEEP:
                run(di, target_ds, _cell_config(cfg, method, True, batch_b=b))
    elif args.study == "top_m":
        values = list(TOP_M_SWEEP) + [cfg.source_classes]
        for di, target_ds in enumerate(targets):
            for m in values:
                run(di, target_ds, _cell_config(cfg, method, True, top_m=m))
    elif args.study == "target_reg":
        for di, target_ds in enumerate(targets):
            for inputs in ("source", "target"):
                cell = _cell_config(cfg, method, True, regularization_inputs=inputs)
                run(di, target_ds, cell, setting=inputs)
    else:
        raise ConfigError(f"unknown study {args.study!r}")

    write_results(args.out, rows)
    print(f"wrote {len(rows)} result rows to {args.out}")
    if change_rows:
        change_path = _param_change_path(args.out)
        write_parameter_change(change_path, change_rows)
        print(f"wrote per-block parameter changes to {change_path}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.csv_paths:
        rows.extend(read_results(path))
    print(render_comparison(build_comparison(rows)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asc",
        description="Consistency-regularized few-shot finetuning on synthetic domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_pre = sub.add_parser("pretrain", help="pretrain an encoder on the synthetic source domain")
    p_pre.add_argument("--config", help="experiment config file (defaults apply if omitted)")
    p_pre.add_argument("--out", required=True, help="checkpoint output path")
    p_pre.add_argument("--seed", type=int, help="master seed override")
    p_pre.set_defaults(func=cmd_pretrain)

    p_eval = sub.add_parser("evaluate", help="run the method x regularizer x domain grid")
    p_eval.add_argument("--config", help="experiment config file")
    p_eval.add_argument("--checkpoint", required=True, help="pretrained encoder checkpoint")
    p_eval.add_argument("--out", required=True, help="results CSV output path")
    p_eval.add_argument("--seed", type=int, help="master seed override")
    p_eval.add_argument("--episodes", type=int, help="episodes per cell override")
    p_eval.add_argument("--jobs", type=int, help="concurrent episode workers")
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="sweep one study axis")
    p_abl.add_argument("--config", help="experiment config file")
    p_abl.add_argument("--checkpoint", required=True)
    p_abl.add_argument(
        "--study", required=True,
        choices=("weights", "block", "batch_size", "top_m", "target_reg"),
    )
    p_abl.add_argument("--out", required=True, help="results CSV output path")
    p_abl.add_argument("--seed", type=int, help="master seed override")
    p_abl.add_argument("--episodes", type=int, help="episodes per cell override")
    p_abl.add_argument("--jobs", type=int, help="concurrent episode workers")
    p_abl.set_defaults(func=cmd_ablate)

    p_rep = sub.add_parser("report", help="print a baseline-vs-regularized comparison table")
    p_rep.add_argument("csv_paths", nargs="+", help="result CSV files sharing the schema")
    p_rep.set_defaults(func=cmd_report)

    return parser


def run(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (FormatError, OSError) as err:
        logger.error("%s", err)
        return 3
    except NumericError as err:
        logger.error("numeric failure: %s", err)
        return 4
    except ASCError as err:
        logger.error("%s", err)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
