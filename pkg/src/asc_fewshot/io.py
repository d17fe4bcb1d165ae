"""Checkpoint and result-file persistence.

Checkpoints are plain text for debuggability: a magic line, the
architecture dims, then one whitespace-separated decimal line per
parameter array at 17 significant digits (bit-exact for float64).
Result CSVs carry one row per evaluated cell under a fixed header.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from .autodiff import Tensor
from .encoder import Encoder, EncoderBlock
from .errors import FormatError

CHECKPOINT_MAGIC = "ASCCKPT"
CHECKPOINT_VERSION = "v1"

CSV_COLUMNS = (
    "method", "asc", "domain", "shift", "n_way", "k_shot", "episodes",
    "mean_acc", "ci95", "lambda", "batch_b", "top_m", "reg_block", "seed",
    "wall_time_s",
)
CSV_HEADER = ",".join(CSV_COLUMNS)


def save_checkpoint(path, encoder: Encoder) -> None:
    with open(path, "w") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        fh.write("dims " + " ".join(str(d) for d in encoder.layer_dims) + "\n")
        for p in encoder.parameters():
            fh.write(" ".join(f"{v:.17g}" for v in p.data.ravel()) + "\n")


def load_checkpoint(path) -> Encoder:
    with open(path) as fh:
        magic = fh.readline().split()
        if magic != [CHECKPOINT_MAGIC, CHECKPOINT_VERSION]:
            raise FormatError(f"{path}: not a {CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} checkpoint")
        dims_line = fh.readline().split()
        if len(dims_line) < 3 or dims_line[0] != "dims":
            raise FormatError(f"{path}: missing architecture dims line")
        try:
            dims = [int(v) for v in dims_line[1:]]
        except ValueError:
            raise FormatError(f"{path}: malformed dims line") from None
        blocks = []
        n_blocks = len(dims) - 1
        for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
            try:
                weight = np.array([float(v) for v in fh.readline().split()])
                bias = np.array([float(v) for v in fh.readline().split()])
            except ValueError:
                raise FormatError(f"{path}: malformed parameter line in block {i + 1}") from None
            if weight.size != d_out * d_in or bias.size != d_out:
                raise FormatError(f"{path}: block {i + 1} parameter count mismatch")
            blocks.append(
                EncoderBlock(
                    Tensor(weight.reshape(d_out, d_in), requires_grad=True),
                    Tensor(bias, requires_grad=True),
                    apply_relu=i < n_blocks - 1,
                )
            )
    return Encoder(blocks)


@dataclass
class ResultRow:
    """One evaluated cell of the results grid."""

    method: str
    asc: bool
    domain: str
    shift: float
    n_way: int
    k_shot: int
    episodes: int
    mean_acc: float
    ci95: float
    lambda_: float
    batch_b: int
    top_m: Optional[int]
    reg_block: Union[int, str]
    seed: int
    wall_time_s: float

    def to_csv(self) -> List[str]:
        return [
            self.method,
            "on" if self.asc else "off",
            self.domain,
            repr(float(self.shift)),
            str(self.n_way),
            str(self.k_shot),
            str(self.episodes),
            repr(float(self.mean_acc)),
            repr(float(self.ci95)),
            repr(float(self.lambda_)),
            str(self.batch_b),
            "none" if self.top_m is None else str(self.top_m),
            str(self.reg_block),
            str(self.seed),
            repr(float(self.wall_time_s)),
        ]

    @classmethod
    def from_csv(cls, record: List[str]) -> "ResultRow":
        if len(record) != len(CSV_COLUMNS):
            raise FormatError(f"result row has {len(record)} fields, expected {len(CSV_COLUMNS)}")
        reg_block = record[12]
        if reg_block not in ("semantic", "all"):
            reg_block = int(reg_block)
        return cls(
            method=record[0],
            asc=record[1] == "on",
            domain=record[2],
            shift=float(record[3]),
            n_way=int(record[4]),
            k_shot=int(record[5]),
            episodes=int(record[6]),
            mean_acc=float(record[7]),
            ci95=float(record[8]),
            lambda_=float(record[9]),
            batch_b=int(record[10]),
            top_m=None if record[11] == "none" else int(record[11]),
            reg_block=reg_block,
            seed=int(record[13]),
            wall_time_s=float(record[14]),
        )


def write_results(path, rows: List[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.to_csv())


def read_results(path) -> List[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty results file") from None
        if header != list(CSV_COLUMNS):
            raise FormatError(f"{path}: unexpected CSV header {header}")
        return [ResultRow.from_csv(record) for record in reader]


def write_parameter_change(path, rows) -> None:
    """Per-block parameter-change table: (domain, setting, one column per block)."""
    if not rows:
        return
    n_blocks = len(rows[0][2])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "setting"] + [f"block_{i + 1}" for i in range(n_blocks)])
        for domain, setting, change in rows:
            writer.writerow([domain, setting] + [repr(float(v)) for v in change])
