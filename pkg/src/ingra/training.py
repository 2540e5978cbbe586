"""Losses, the two-phase training loop and per-individual attention extraction."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autograd as ag
from . import prototypes as proto
from .autograd import Tensor
from .config import ModelConfig
from .data import MtsSample, standardize, window_arrays, window_offsets
from .errors import ConfigError, DataError, NumericError
from .model import AttentionRecord, Forward, IngraModel, granger_attention
from .nn import sgd_step

logger = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "phase", "pred", "aux", "div", "total", "wall_ms")
EVAL_BATCH = 1024


def loss_pred(y_hat, targets) -> Tensor:
    """Mean squared error over the batch."""
    y_hat = ag.as_tensor(y_hat)
    targets = np.asarray(targets, dtype=np.float64)
    if y_hat.shape[0] == 0:
        raise ConfigError("empty batch")
    if y_hat.shape != targets.shape:
        raise ConfigError(f"prediction shape {y_hat.shape} != target shape {targets.shape}")
    return ag.mean(ag.square(y_hat - targets))


def loss_aux(eps_all, eps_without) -> Tensor:
    """Batch mean of ``eps_all + sum_s eps_without[s]``."""
    eps_all, eps_without = ag.as_tensor(eps_all), ag.as_tensor(eps_without)
    if eps_all.shape[0] == 0:
        raise ConfigError("empty batch")
    if eps_without.shape[0] != eps_all.shape[0]:
        raise ConfigError("auxiliary error batches differ in length")
    return ag.mean(eps_all + ag.tsum(eps_without, axis=-1))


@dataclass
class EpochLog:
    epoch: int
    phase: str
    pred: float
    aux: float
    div: float
    total: float
    wall_ms: float


@dataclass
class TrainState:
    config: ModelConfig
    epoch: int = 0
    phase: str = "pretrain"
    log: list[EpochLog] = field(default_factory=list)
    best_total: float = float("inf")
    best_epoch: Optional[int] = None
    best_checkpoint: Optional[Path] = None
    init_attention: Optional[np.ndarray] = None

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_FIELDS)
            for row in self.log:
                writer.writerow([row.epoch, row.phase, repr(row.pred), repr(row.aux),
                                 repr(row.div), repr(row.total), f"{row.wall_ms:.1f}"])


@dataclass
class WindowSet:
    inputs: np.ndarray  # (N, S, T)
    targets: np.ndarray  # (N,)
    owners: np.ndarray  # (N,) index into the sample list

    def __len__(self) -> int:
        return self.targets.size


def build_windows(samples: Sequence[MtsSample], window: int, stride: int = 1,
                  target_index: int = 0, scale: bool = False) -> WindowSet:
    if not samples:
        raise DataError("no samples to window")
    parts, targets, owners = [], [], []
    for i, sample in enumerate(samples):
        if scale:
            sample = standardize(sample)
        x, y = window_arrays(sample, window, stride, target_index)
        parts.append(x)
        targets.append(y)
        owners.append(np.full(y.size, i))
    return WindowSet(np.concatenate(parts), np.concatenate(targets), np.concatenate(owners))


def attribution_sums(model: IngraModel, windows: WindowSet, n_owners: int) -> np.ndarray:
    """Sum of per-window attributions for each owner, shape ``(n_owners, S)``."""
    sums = np.zeros((n_owners, model.config.num_variables))
    with ag.no_grad():
        for start in range(0, len(windows), EVAL_BATCH):
            sl = slice(start, start + EVAL_BATCH)
            out = model.forward(windows.inputs[sl], windows.targets[sl], mode="inference", alpha=1.0)
            np.add.at(sums, windows.owners[sl], out.delta_eps.data)
    return sums


def evaluate_individual_attention(model: IngraModel, sample: MtsSample) -> AttentionRecord:
    """Aggregate attributions over every unit-stride window, then normalise."""
    cfg = model.config
    window_offsets(sample.length, cfg.window_length)
    windows = build_windows([sample], cfg.window_length, 1, cfg.target_index, cfg.standardize)
    return record_from_sums(model, attribution_sums(model, windows, 1)[0])


def evaluate_many(model: IngraModel, samples: Sequence[MtsSample]) -> list[AttentionRecord]:
    cfg = model.config
    windows = build_windows(samples, cfg.window_length, 1, cfg.target_index, cfg.standardize)
    sums = attribution_sums(model, windows, len(samples))
    return [record_from_sums(model, row) for row in sums]


def record_from_sums(model: IngraModel, delta_sum: np.ndarray) -> AttentionRecord:
    q = granger_attention(delta_sum).data
    a, r, k = model.attention_from_q(q)
    return AttentionRecord(q, r, a, k, delta_sum)


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def train(samples: Sequence[MtsSample], config: ModelConfig,
          out_dir: Optional[str | Path] = None,
          monitor: Optional[Callable[[Forward], None]] = None,
          model: Optional[IngraModel] = None) -> tuple[IngraModel, TrainState]:
    """Pretrain with the prototype path off, initialise prototypes by
    spherical k-means on per-individual attention, then train everything.

    ``monitor`` (if given) sees the forward record of every batch.
    """
    if samples and samples[0].num_variables != config.num_variables:
        raise ConfigError(f"config expects {config.num_variables} variables, "
                          f"data has {samples[0].num_variables}")
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    if model is None:
        model = IngraModel(config, np.random.default_rng(seeds[0]))
    rng = np.random.default_rng(seeds[1])
    kmeans_rng = np.random.default_rng(seeds[2])
    windows = build_windows(samples, config.window_length, config.train_stride,
                            config.target_index, config.standardize)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    state = TrainState(config)
    logger.info("training on %d windows from %d individuals", len(windows), len(samples))

    def run_epoch(phase: str) -> EpochLog:
        alpha = 1.0 if phase == "pretrain" else config.alpha
        skip = ("prototypes",) if phase == "pretrain" else ()
        start = time.perf_counter()
        sums = np.zeros(4)
        for idx in _batches(len(windows), config.batch_size, rng):
            fwd = model.forward(windows.inputs[idx], windows.targets[idx], mode="train",
                                rng=rng, alpha=alpha)
            if monitor is not None:
                monitor(fwd)
            lp = loss_pred(fwd.y_hat, windows.targets[idx])
            la = loss_aux(fwd.eps_all, fwd.eps_without)
            total = lp + config.lambda1 * la
            ld = 0.0
            if phase == "main":
                div = proto.diversity_loss(model.prototypes, config.gamma)
                total = total + config.lambda2 * div
                ld = div.item()
            if not np.isfinite(total.item()):
                raise NumericError(f"non-finite loss in {phase} epoch {state.epoch}")
            model.params.zero_grad()
            ag.backward(total)
            sgd_step(model.params, config.learning_rate, skip=skip)
            sums += len(idx) * np.array([lp.item(), la.item(), ld, 0.0])
        pred, aux, div, _ = (float(v) for v in sums / len(windows))
        row = EpochLog(state.epoch, phase, pred, aux, div,
                       pred + config.lambda1 * aux + config.lambda2 * div,
                       (time.perf_counter() - start) * 1000.0)
        state.log.append(row)
        logger.info("epoch %d %s pred=%.5f aux=%.5f div=%.4f total=%.5f",
                    row.epoch, phase, pred, aux, div, row.total)
        return row

    try:
        for _ in range(config.pretrain_epochs):
            state.epoch += 1
            run_epoch("pretrain")

        sums = attribution_sums(model, windows, len(samples))
        q_init = np.stack([granger_attention(row).data for row in sums])
        state.init_attention = q_init
        k = min(config.num_prototypes, len(samples))
        centers = proto.kmeans_init(q_init, k, kmeans_rng)
        if k < config.num_prototypes:
            extra = kmeans_rng.uniform(0.0, 1.0, size=(config.num_prototypes - k, config.num_variables))
            centers = np.vstack([centers, extra])
        model.prototypes.data[...] = centers

        state.phase = "main"
        for _ in range(config.train_epochs):
            state.epoch += 1
            row = run_epoch("main")
            if row.total < state.best_total:
                state.best_total, state.best_epoch = row.total, row.epoch
                if out is not None:
                    state.best_checkpoint = out / "model_best.json"
                    model.save(state.best_checkpoint)
    finally:
        if out is not None:
            state.write_log(out / "training_log.csv")
    if out is not None:
        model.save(out / "model_final.json")
    return model, state
