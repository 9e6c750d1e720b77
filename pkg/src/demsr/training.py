"""Training with the step-accumulated L1 objective, Adam and a multi-step LR schedule."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .metrics import rmse
from .network import ConfigError, DSRFB, SrOutputs, predict, save_checkpoint
from .resample import DatasetManifest, TrainPair

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    batch_size: int = 4
    base_lr: float = 1e-4
    lr_milestones: list[int] = field(default_factory=lambda: [50, 75, 90])
    lr_gamma: float = 0.5
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        self.lr_milestones = [int(m) for m in self.lr_milestones]
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        ms = self.lr_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"lr_milestones must be strictly increasing, got {ms}")
        if ms and (ms[0] < 0 or ms[-1] >= self.epochs):
            raise ConfigError(f"lr_milestones must lie in [0, epochs), got {ms} with epochs={self.epochs}")
        if not 0 < self.lr_gamma <= 1:
            raise ConfigError(f"lr_gamma must lie in (0, 1], got {self.lr_gamma}")

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"invalid train config: {exc}") from None


def accumulated_l1(outputs: SrOutputs | list, hr: torch.Tensor) -> torch.Tensor:
    """Sum over unroll steps of the per-pixel mean absolute error against ``hr``."""
    steps = outputs.sr if isinstance(outputs, SrOutputs) else list(outputs)
    if not steps:
        raise ValueError("no SR outputs")
    total = None
    for sr in steps:
        if sr.shape != hr.shape:
            raise ValueError(f"shape mismatch: output {tuple(sr.shape)} vs HR {tuple(hr.shape)}")
        term = (sr - hr).abs().mean()
        total = term if total is None else total + term
    return total


def lr_at(epoch: int, config: TrainConfig) -> float:
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    decays = sum(1 for m in config.lr_milestones if m <= epoch)
    return config.base_lr * config.lr_gamma**decays


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_rmse: float | None
    lr: float
    wall_time: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")


def _param_dtype(net) -> torch.dtype:
    return next(net.parameters()).dtype


def _stack(pairs: list[TrainPair], dtype) -> tuple[torch.Tensor, torch.Tensor]:
    ilr = np.stack([p.ilr.heights for p in pairs])[:, None]
    hr = np.stack([p.hr.heights for p in pairs])[:, None]
    return torch.as_tensor(ilr, dtype=dtype), torch.as_tensor(hr, dtype=dtype)


def train_step(net: DSRFB, optimizer: torch.optim.Optimizer, ilr: torch.Tensor, hr: torch.Tensor,
               batch_ids=()) -> float:
    optimizer.zero_grad(set_to_none=True)
    loss = accumulated_l1(net(ilr), hr)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NumericalAbort(f"non-finite loss {value} on batch {list(batch_ids)}")
    loss.backward()
    optimizer.step()
    return value


def make_optimizer(net: DSRFB, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def _as_pairs(data) -> list[TrainPair]:
    if isinstance(data, DatasetManifest):
        return data.load_pairs()
    return list(data)


def validate(net: DSRFB, data) -> float:
    """Mean per-pair RMSE of the final-step prediction."""
    pairs = _as_pairs(data)
    if not pairs:
        raise ValueError("validation set is empty")
    was_training = net.training
    net.eval()
    try:
        scores = [rmse(predict(net, p.ilr.heights, "last"), p.hr.heights) for p in pairs]
    finally:
        net.train(was_training)
    return float(np.mean(scores))


def train(net: DSRFB, data, config: TrainConfig, val_data=None, out_dir=None) -> TrainReport:
    """Optimize ``net`` on ``data`` (a manifest or a list of pairs).

    With ``out_dir`` set, writes ``last.ckpt`` after every epoch, ``best.ckpt``
    whenever validation RMSE improves, and ``report.jsonl``.
    """
    pairs = _as_pairs(data)
    if not pairs:
        raise ValueError("training set is empty")
    val_pairs = _as_pairs(val_data) if val_data is not None else []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    dtype = _param_dtype(net)
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    optimizer = make_optimizer(net, lr_at(0, config))
    report = TrainReport()
    best = math.inf
    net.train()
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        start = time.perf_counter()
        order = rng.permutation(len(pairs))
        losses = []
        for b in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[b:b + config.batch_size]]
            ilr, hr = _stack(batch, dtype)
            losses.append(train_step(net, optimizer, ilr, hr, [p.id for p in batch]))
        val = validate(net, val_pairs) if val_pairs else None
        record = EpochRecord(epoch=epoch, loss=float(np.mean(losses)), val_rmse=val, lr=lr,
                             wall_time=time.perf_counter() - start)
        report.records.append(record)
        log.info("epoch %d loss %.6f val_rmse %s lr %.3g", epoch, record.loss, val, lr)
        if out_dir is not None:
            save_checkpoint(net, out_dir / "last.ckpt", {"epoch": epoch})
            if val is not None and val < best:
                best = val
                save_checkpoint(net, out_dir / "best.ckpt", {"epoch": epoch, "val_rmse": val})
            report.write_jsonl(out_dir / "report.jsonl")
    return report


def overfit_pair(net: DSRFB, pair: TrainPair, steps: int, lr: float = 1e-4) -> list[float]:
    """Repeated Adam steps on one pair; returns the loss before each step."""
    dtype = _param_dtype(net)
    ilr, hr = _stack([pair], dtype)
    optimizer = make_optimizer(net, lr)
    net.train()
    return [train_step(net, optimizer, ilr, hr, [pair.id]) for _ in range(steps)]
