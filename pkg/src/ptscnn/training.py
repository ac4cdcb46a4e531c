"""Training loop: weighted loss, Adam, crop-ramp augmentation, LR plateaus.

Two protocol presets ship as TrainConfig constructors: a 100-epoch run with a
20% validation split monitored by AUROC, and a 1000-epoch run with a 10%
split monitored by the three-view validation loss (original plus first and
latter half crops), plateau LR halving, and early stopping.

Everything is driven by one seeded generator, so a run is reproducible
bit-for-bit in 64-bit mode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import (Dataset, SeriesRecord, crop_schedule, half_crops,
                   random_crop)
from .evaluation import auroc_macro, predict_records
from .models import Model
from .tensor import Tensor


def class_weights(labels, classes: int | None = None) -> np.ndarray:
    """Inverse-class-frequency weights: w_c = total / (N * count_c).

    All ones on a balanced dataset.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = classes if classes is not None else int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n)
    if (counts == 0).any():
        missing = np.nonzero(counts == 0)[0].tolist()
        raise ValueError(f"class(es) {missing} have no samples")
    return len(labels) / (n * counts.astype(np.float64))


class Adam:
    """Bias-corrected Adam; weight decay is decoupled (lr * wd * param)."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    min_lr: float = 1e-4
    plateau_patience: int = 50
    plateau_factor: float = 0.5
    early_stop_patience: int = 100
    weight_decay: float = 0.0
    seed: int = 0
    val_fraction: float = 0.1
    monitor: str = "val_loss"          # or "auroc"
    val_views: int = 3                 # 3 = original + both half crops
    crop_start: float = 1.0
    crop_end: float = 0.1
    crop_ramp_end: int = 800
    eval_batch_size: int = 64

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.min_lr > self.lr:
            raise ValueError("min_lr cannot exceed the initial lr")
        if self.monitor not in ("val_loss", "auroc"):
            raise ValueError("monitor must be 'val_loss' or 'auroc'")
        if self.val_views not in (1, 3):
            raise ValueError("val_views must be 1 or 3")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")

    @staticmethod
    def trajectory_protocol(**overrides) -> "TrainConfig":
        """100 epochs, 20% validation split monitored by AUROC."""
        base = dict(epochs=100, val_fraction=0.2, monitor="auroc",
                    val_views=1, early_stop_patience=100, crop_ramp_end=800)
        base.update(overrides)
        return TrainConfig(**base)

    @staticmethod
    def archive_protocol(**overrides) -> "TrainConfig":
        """Up to 1000 epochs, 10% split, three-view loss, plateau LR, early stop."""
        base = dict(epochs=1000, val_fraction=0.1, monitor="val_loss",
                    plateau_patience=50, early_stop_patience=100,
                    crop_ramp_end=800)
        base.update(overrides)
        return TrainConfig(**base)


class LrPlateauMonitor:
    """Tracks the monitored metric; halves the LR on plateaus, stops on stall.

    A plateau is `plateau_patience` consecutive epochs without strict
    improvement; the LR never drops below `min_lr`. Early stop triggers after
    `early_stop_patience` epochs without a new best.
    """

    def __init__(self, lr: float, min_lr: float, plateau_patience: int,
                 plateau_factor: float, early_stop_patience: int):
        self.lr = lr
        self.min_lr = min_lr
        self.plateau_patience = plateau_patience
        self.plateau_factor = plateau_factor
        self.early_stop_patience = early_stop_patience
        self.best = math.inf
        self.since_best = 0
        self.plateau_count = 0

    def observe(self, value: float) -> tuple[bool, bool]:
        """Feed one epoch's monitored value; returns (improved, should_stop)."""
        improved = value < self.best
        if improved:
            self.best = value
            self.since_best = 0
            self.plateau_count = 0
        else:
            self.since_best += 1
            self.plateau_count += 1
            if self.plateau_count >= self.plateau_patience:
                self.lr = max(self.lr * self.plateau_factor, self.min_lr)
                self.plateau_count = 0
        return improved, self.since_best >= self.early_stop_patience


@dataclass
class TrainResult:
    history: list[dict]
    best_arrays: list[tuple[str, np.ndarray]]
    best_epoch: int
    best_metric: float
    class_weights: np.ndarray
    stopped_early: bool = False

    def load_best(self, model: Model) -> None:
        stored = dict(self.best_arrays)
        for name, p in model.parameters():
            p.data = stored[name].copy()
        for i, b in enumerate(model.blocks):
            for n, a in b.state_arrays():
                a[...] = stored[f"block{i}.{n}"]


def stratified_split(records: list[SeriesRecord], fraction: float,
                     rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Per-class shuffled split; returns (train indices, validation indices)."""
    labels = np.array([r.label for r in records])
    train_idx: list[int] = []
    val_idx: list[int] = []
    for c in np.unique(labels):
        members = np.nonzero(labels == c)[0]
        members = members[rng.permutation(len(members))]
        n_val = max(1, int(round(fraction * len(members)))) if len(members) > 1 else 0
        val_idx += members[:n_val].tolist()
        train_idx += members[n_val:].tolist()
    return sorted(train_idx), sorted(val_idx)


def _pooled_loss(model: Model, records: list[SeriesRecord],
                 weights_by_class: np.ndarray, batch_size: int) -> float:
    """Weighted cross-entropy pooled over minibatches (eval mode)."""
    total, weight_sum = 0.0, 0.0
    for i in range(0, len(records), batch_size):
        batch = model.prepare_batch(records[i:i + batch_size], weights_by_class)
        w = float(batch.weights.sum())
        total += model.loss(batch, mode="eval").item() * w
        weight_sum += w
    return total / weight_sum


def validation_loss(model: Model, records: list[SeriesRecord],
                    weights_by_class: np.ndarray, batch_size: int = 64) -> float:
    """Mean loss over three fixed views: original, first half, latter half."""
    if not records:
        raise ValueError("validation set is empty")
    firsts, latters = zip(*(half_crops(r) for r in records))
    views = (list(records), list(firsts), list(latters))
    return float(np.mean([
        _pooled_loss(model, v, weights_by_class, batch_size) for v in views
    ]))


def train(model: Model, dataset: Dataset, cfg: TrainConfig,
          abort_dump_path=None) -> TrainResult:
    """Run the optimization loop; the model ends at its last state and the
    best checkpoint (by the monitored metric) is returned separately."""
    rng = np.random.default_rng(cfg.seed)

    train_idx, val_idx = stratified_split(dataset.records, cfg.val_fraction, rng)
    train_records = [dataset.records[i] for i in train_idx]
    val_records = [dataset.records[i] for i in val_idx]
    weights_by_class = class_weights([r.label for r in train_records],
                                     model.cfg.classes)

    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    monitor = LrPlateauMonitor(cfg.lr, cfg.min_lr, cfg.plateau_patience,
                               cfg.plateau_factor, cfg.early_stop_patience)
    history: list[dict] = []
    best_epoch = -1
    best_arrays: list[tuple[str, np.ndarray]] = []
    stopped_early = False

    for epoch in range(cfg.epochs):
        ratio = crop_schedule(epoch, cfg.crop_ramp_end, cfg.crop_start, cfg.crop_end)
        order = rng.permutation(len(train_records))
        epoch_loss, epoch_weight = 0.0, 0.0
        for i in range(0, len(order), cfg.batch_size):
            chosen = [train_records[j] for j in order[i:i + cfg.batch_size]]
            chosen = [random_crop(r, ratio, rng) for r in chosen]
            batch = model.prepare_batch(chosen, weights_by_class)
            loss = model.loss(batch, mode="train")
            value = loss.item()
            if not math.isfinite(value):
                if abort_dump_path is not None:
                    model.save(abort_dump_path)
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}"
                    + (f"; diagnostic checkpoint at {abort_dump_path}"
                       if abort_dump_path else "")
                )
            model.zero_grad()
            loss.backward()
            opt.step()
            w = float(batch.weights.sum())
            epoch_loss += value * w
            epoch_weight += w

        if cfg.val_views == 3:
            val_loss = validation_loss(model, val_records, weights_by_class,
                                       cfg.eval_batch_size)
        else:
            val_loss = _pooled_loss(model, val_records, weights_by_class,
                                    cfg.eval_batch_size)
        row = {
            "epoch": epoch,
            "train_loss": epoch_loss / epoch_weight,
            "val_loss": val_loss,
            "lr": opt.lr,
            "crop_ratio": ratio,
        }
        if cfg.monitor == "auroc":
            probs, _ = predict_records(model, val_records, cfg.eval_batch_size)
            val_auroc = auroc_macro(probs, [r.label for r in val_records])
            row["val_auroc"] = val_auroc
            monitored = -val_auroc
        else:
            monitored = val_loss
        if not math.isfinite(val_loss):
            if abort_dump_path is not None:
                model.save(abort_dump_path)
            raise RuntimeError(f"non-finite validation loss at epoch {epoch}")
        history.append(row)

        improved, should_stop = monitor.observe(monitored)
        opt.lr = monitor.lr
        if improved:
            best_epoch = epoch
            best_arrays = [(n, a.copy()) for n, a in model.named_arrays()]
        if should_stop:
            stopped_early = True
            break

    return TrainResult(history=history, best_arrays=best_arrays,
                       best_epoch=best_epoch, best_metric=monitor.best,
                       class_weights=weights_by_class, stopped_early=stopped_early)


def history_to_csv(history: list[dict], path) -> None:
    if not history:
        return
    fields = list(history[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(history)
