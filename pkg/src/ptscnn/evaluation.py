"""Metrics and evaluation protocols.

Balanced accuracy is the mean of per-class recalls; AUROC uses the rank
statistic (probability that a random positive outranks a random negative,
ties counting one half) with a one-vs-rest macro average beyond two classes.
Reports break balanced accuracy down by length group (short/middle/long,
default boundaries at the tertiles of the evaluated lengths) and can score
the first/latter halves of every record as independent partial inputs.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, DatasetMeta, SeriesRecord, half_crops

GROUP_NAMES = ("short", "middle", "long")


def confusion_matrix(true, pred, classes: int) -> np.ndarray:
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    out = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(out, (true, pred), 1)
    return out


def balanced_accuracy(confusion: np.ndarray) -> float:
    confusion = np.asarray(confusion)
    totals = confusion.sum(axis=1)
    if (totals == 0).any():
        empty = np.nonzero(totals == 0)[0].tolist()
        raise ValueError(f"no samples for class(es) {empty}")
    return float(np.mean(np.diag(confusion) / totals))


def auroc(scores, labels) -> float:
    """Binary AUROC from positive-class scores via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both labels present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average the ranks of tied scores
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auroc_macro(probabilities: np.ndarray, labels) -> float:
    """One-vs-rest macro AUROC; equals binary AUROC for two classes."""
    probabilities = np.asarray(probabilities)
    labels = np.asarray(labels)
    n_classes = probabilities.shape[1]
    if n_classes == 2:
        return auroc(probabilities[:, 1], (labels == 1).astype(np.int64))
    values = []
    for c in range(n_classes):
        binary = (labels == c).astype(np.int64)
        if 0 < binary.sum() < len(binary):
            values.append(auroc(probabilities[:, c], binary))
    if not values:
        raise ValueError("no class has both positives and negatives")
    return float(np.mean(values))


def length_groups(lengths, boundaries=None) -> tuple[np.ndarray, tuple[float, float]]:
    """Assign short/middle/long group indices by series length.

    A length exactly equal to a boundary goes to the lower group. Default
    boundaries sit at the tertiles of the given lengths.
    """
    lengths = np.asarray(lengths)
    if boundaries is None:
        b1, b2 = np.quantile(lengths, [1 / 3, 2 / 3])
    else:
        b1, b2 = boundaries
        if not b1 <= b2:
            raise ValueError("boundaries must be ascending")
    groups = np.where(lengths <= b1, 0, np.where(lengths <= b2, 1, 2))
    return groups, (float(b1), float(b2))


@dataclass
class EvalReport:
    view: str
    n_samples: int
    accuracy: float
    balanced_accuracy: float
    auroc: float
    group_balanced_accuracy: dict[str, float]
    group_boundaries: tuple[float, float]
    confusion: np.ndarray
    seed: int | None = None

    def metrics_flat(self) -> dict[str, float]:
        out = {
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "auroc": self.auroc,
        }
        for g, v in self.group_balanced_accuracy.items():
            out[f"balanced_accuracy_{g}"] = v
        return out

    def to_dict(self) -> dict:
        return {
            "view": self.view,
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "auroc": self.auroc,
            "group_balanced_accuracy": self.group_balanced_accuracy,
            "group_boundaries": list(self.group_boundaries),
            "confusion": self.confusion.tolist(),
            "seed": self.seed,
        }

    def render(self) -> str:
        g = self.group_balanced_accuracy
        lines = [
            f"view: {self.view} ({self.n_samples} samples)",
            f"  accuracy           {self.accuracy:.4f}",
            f"  balanced accuracy  {self.balanced_accuracy:.4f}"
            f"  (short {g['short']:.4f} / middle {g['middle']:.4f} / long {g['long']:.4f})",
            f"  auroc              {self.auroc:.4f}",
        ]
        return "\n".join(lines)


def predict_records(model, records: list[SeriesRecord], batch_size: int = 64
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode (probabilities, predictions) over records in a fixed order.

    PTSC_THREADS > 1 runs batches on a thread pool; results are reduced in
    batch order either way, so the output is deterministic.
    """
    chunks = [records[i:i + batch_size] for i in range(0, len(records), batch_size)]

    def run(chunk):
        return model.forward(model.prepare_batch(chunk), mode="eval")

    workers = int(os.environ.get("PTSC_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run, chunks))
    else:
        outs = [run(c) for c in chunks]
    probs = np.concatenate([o.probabilities for o in outs])
    preds = np.concatenate([o.predicted for o in outs])
    return probs, preds


def _score_view(model, records, meta: DatasetMeta, view: str, boundaries,
                batch_size: int, seed) -> EvalReport:
    probs, preds = predict_records(model, records, batch_size)
    labels = np.array([r.label for r in records], dtype=np.int64)
    lengths = np.array([r.length for r in records], dtype=np.int64)
    conf = confusion_matrix(labels, preds, meta.classes)
    groups, bounds = length_groups(lengths, boundaries)
    group_bacc = {}
    for gi, name in enumerate(GROUP_NAMES):
        sel = groups == gi
        if sel.any() and _all_classes_present(labels[sel], meta.classes):
            group_bacc[name] = balanced_accuracy(
                confusion_matrix(labels[sel], preds[sel], meta.classes))
        else:
            group_bacc[name] = float("nan")
    return EvalReport(
        view=view,
        n_samples=len(records),
        accuracy=float((preds == labels).mean()),
        balanced_accuracy=balanced_accuracy(conf),
        auroc=auroc_macro(probs, labels),
        group_balanced_accuracy=group_bacc,
        group_boundaries=bounds,
        confusion=conf,
        seed=seed,
    )


def _all_classes_present(labels: np.ndarray, classes: int) -> bool:
    return len(np.unique(labels)) == classes


def evaluate(model, dataset: Dataset, protocol: str = "complete",
             boundaries=None, batch_size: int = 64,
             seed: int | None = None) -> dict[str, EvalReport]:
    """Deterministic evaluation; returns one report per requested view."""
    if protocol not in ("complete", "half_crop", "both"):
        raise ValueError(f"unknown protocol {protocol!r}")
    out: dict[str, EvalReport] = {}
    if protocol in ("complete", "both"):
        out["complete"] = _score_view(model, dataset.records, dataset.meta,
                                      "complete", boundaries, batch_size, seed)
    if protocol in ("half_crop", "both"):
        halves: list[SeriesRecord] = []
        for r in dataset.records:
            first, latter = half_crops(r)
            halves += [first, latter]
        out["half_crop"] = _score_view(model, halves, dataset.meta,
                                       "half_crop", boundaries, batch_size, seed)
    return out


def multi_seed_summary(reports: list[EvalReport]) -> dict[str, dict[str, float]]:
    """Mean, median, and standard deviation of every metric across seeds."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to summarize")
    keys = reports[0].metrics_flat().keys()
    table = {k: np.array([r.metrics_flat()[k] for r in reports]) for k in keys}
    return {
        k: {
            "mean": float(np.mean(v)),
            "median": float(np.median(v)),
            "std": float(np.std(v, ddof=1)),
        }
        for k, v in table.items()
    }
