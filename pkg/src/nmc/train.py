"""Mini-batch training over the observed area-(I) entries with early stopping."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import AreaSplit, InputBuilder, SparseRatings, round_half_up, scale
from .errors import DivergedError, NoDataError, ShapeError
from .evaluate import rmse
from .model import NmcModel, save_model
from .nn import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    max_epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_frac: float = 0.05
    patience: int = 10
    seed: int = 0
    checkpoint_path: str | None = None
    mask_target: bool = False
    input_dropout: float = 0.0
    input_dropout_scale: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0.0 <= self.val_frac < 0.5:
            raise ValueError("val_frac must lie in [0, 0.5)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_rmse: float
    wall_time: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_rmse,wall_time_s"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss:.10g},{r.val_rmse:.10g},{r.wall_time:.3f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


class EarlyStopping:
    """Track the best monitored value; ``update`` returns True once patience runs out."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch, value) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.bad_epochs == 0


def make_batches(entries, batch_size, rng) -> list:
    """Shuffle ``entries`` and cut contiguous chunks; a trailing chunk of one is dropped."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    entries = np.asarray(entries)
    shuffled = entries[rng.permutation(len(entries))]
    batches = [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]
    if batches and len(batches[-1]) == 1:
        batches.pop()
    return batches


def split_validation(split: AreaSplit, val_frac, rng):
    """Partition the area-(I) observed entries into (fit, validation) index arrays."""
    tr = np.flatnonzero(split.train_mask)
    if len(tr) == 0:
        raise NoDataError("split has no observed area-(I) entries")
    perm = rng.permutation(len(tr))
    n_val = round_half_up(val_frac * len(tr))
    return np.sort(tr[perm[n_val:]]), np.sort(tr[perm[:n_val]])


def train(model: NmcModel, data: SparseRatings, split: AreaSplit, cfg: TrainConfig = TrainConfig()):
    """Fit ``model`` in place and return ``(model, history)``.

    Validation entries and every held-out entry are masked out of all input
    vectors. The weights of the epoch with the lowest validation RMSE (or the
    lowest training loss when ``val_frac == 0``) are restored before returning.
    """
    split.check_compatible(data)
    if (model.row_cfg.input_len, model.col_cfg.input_len) != (split.m_I, split.n_I):
        raise ShapeError(
            f"model inputs ({model.row_cfg.input_len}, {model.col_cfg.input_len}) do not match "
            f"split (m_I={split.m_I}, n_I={split.n_I})"
        )

    rng = np.random.default_rng(cfg.seed)
    fit_idx, val_idx = split_validation(split, cfg.val_frac, rng)
    if len(fit_idx) < 2:
        raise NoDataError("fewer than two training entries after the validation split")

    exclude = split.heldout.copy()
    exclude[val_idx] = True
    builder = InputBuilder(data, split, exclude)
    targets = scale(data.values, data.alpha, data.beta)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    params = model.params()
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best = model.get_weights()
    start = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        total, seen = 0.0, 0
        for batch in make_batches(fit_idx, cfg.batch_size, rng):
            x_rows = builder.rows(data.rows[batch])
            x_cols = builder.cols(data.cols[batch])
            if cfg.mask_target:
                k = np.arange(len(batch))
                x_rows[k, split.col_pos[data.cols[batch]]] = 0.0
                x_cols[k, split.row_pos[data.rows[batch]]] = 0.0
            if cfg.input_dropout > 0:
                keep = 1.0 - cfg.input_dropout
                scale_by = 1.0 / keep if cfg.input_dropout_scale else 1.0
                x_rows *= (rng.random(x_rows.shape) < keep) * scale_by
                x_cols *= (rng.random(x_cols.shape) < keep) * scale_by
            loss, grads = model.loss_and_grads(x_rows, x_cols, targets[batch], rng)
            if not np.isfinite(loss):
                raise DivergedError(f"non-finite training loss in epoch {epoch}")
            opt.step(params, grads)
            total += loss * len(batch)
            seen += len(batch)
        train_loss = total / seen

        if len(val_idx):
            preds = model.predict_entries(data, split, data.rows[val_idx], data.cols[val_idx],
                                          builder=builder)
            val_rmse = rmse(preds - data.values[val_idx])
            monitor = val_rmse
        else:
            val_rmse = float("nan")
            monitor = train_loss
        history.records.append(EpochRecord(epoch, train_loss, val_rmse, time.perf_counter() - start))
        log.info("epoch %d  train_loss %.5f  val_rmse %.5f", epoch, train_loss, val_rmse)

        stop = stopper.update(epoch, monitor)
        if stopper.improved:
            best = model.get_weights()
            if cfg.checkpoint_path:
                save_model(model, cfg.checkpoint_path)
        if stop:
            break

    model.set_weights(best)
    history.best_epoch = stopper.best_epoch
    return model, history
