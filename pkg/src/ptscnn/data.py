"""Series records, dataset file IO, synthetic generation, and batching.

Dataset file format (text, line oriented)::

    PTSC v1 D=<d> N=<n> TMIN=<a> TMAX=<b>
    <id>,<label>,<t1>,<T>,v_0_0,...,v_0_{T-1},v_1_0,...   (channel-major)

Values are written with shortest round-trip float repr, so save -> load is
bit exact. Records are raw; min-max normalization statistics are computed
from a training split and applied explicitly (see ``minmax_stats``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .rf import ValidInterval
from .tensor import Tensor, get_default_dtype


class ParseError(ValueError):
    """Malformed dataset file; message carries the 1-based line number."""


@dataclass
class SeriesRecord:
    """One labeled partial series: values [D, T] observed from timestamp t1."""

    values: np.ndarray
    t1: int
    label: int
    id: str

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def validate(self, t_max: int) -> None:
        if self.length < 1:
            raise ValueError(f"record {self.id}: empty series")
        if self.t1 < 1:
            raise ValueError(f"record {self.id}: t1 must be >= 1, got {self.t1}")
        if self.t1 + self.length - 1 > t_max:
            raise ValueError(
                f"record {self.id}: t1={self.t1} with T={self.length} overruns "
                f"t_max={t_max}"
            )


@dataclass
class DatasetMeta:
    channels: int
    classes: int
    t_min: int
    t_max: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [str(i) for i in range(self.classes)]


@dataclass
class Dataset:
    meta: DatasetMeta
    records: list[SeriesRecord]

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def lengths(self) -> np.ndarray:
        return np.array([r.length for r in self.records], dtype=np.int64)


# ---------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------

def save_dataset(path, dataset: Dataset) -> None:
    m = dataset.meta
    lines = [f"PTSC v1 D={m.channels} N={m.classes} TMIN={m.t_min} TMAX={m.t_max}"]
    for r in dataset.records:
        vals = ",".join(repr(float(v)) for v in r.values.ravel())
        lines.append(f"{r.id},{r.label},{r.t1},{r.length},{vals}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: line 1: empty file")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "PTSC" or head[1] != "v1":
        raise ParseError(f"{path}: line 1: bad header {lines[0]!r}")
    try:
        fields = {k: int(v) for k, v in (p.split("=") for p in head[2:])}
        meta = DatasetMeta(channels=fields["D"], classes=fields["N"],
                           t_min=fields["TMIN"], t_max=fields["TMAX"])
    except (KeyError, ValueError) as e:
        raise ParseError(f"{path}: line 1: bad header field ({e})") from None

    records: list[SeriesRecord] = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) < 4:
            raise ParseError(f"{path}: line {i}: expected id,label,t1,T,values")
        rid = parts[0]
        try:
            label, t1, t_len = int(parts[1]), int(parts[2]), int(parts[3])
            values = np.array([float(v) for v in parts[4:]], dtype=np.float64)
        except ValueError as e:
            raise ParseError(f"{path}: line {i}: {e}") from None
        if values.size != meta.channels * t_len:
            raise ParseError(
                f"{path}: line {i}: expected {meta.channels * t_len} values, "
                f"got {values.size}"
            )
        if not 0 <= label < meta.classes:
            raise ParseError(f"{path}: line {i}: label {label} outside [0, {meta.classes})")
        rec = SeriesRecord(values.reshape(meta.channels, t_len), t1, label, rid)
        try:
            rec.validate(meta.t_max)
        except ValueError as e:
            raise ParseError(f"{path}: line {i}: {e}") from None
        if not meta.t_min <= t_len <= meta.t_max:
            raise ParseError(
                f"{path}: line {i}: length {t_len} outside [{meta.t_min}, {meta.t_max}]"
            )
        records.append(rec)
    return Dataset(meta, records)


def load_tsv_archive(path) -> Dataset:
    """Ingest the common tab-separated variable-length layout.

    One series per line, label first, then the values; trailing NaN padding
    is dropped. Every record starts at t1 = 1.
    """
    raw: list[tuple[str, np.ndarray]] = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ParseError(f"{path}: line {i}: expected label and values")
            vals = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            good = ~np.isnan(vals)
            if not good.any():
                raise ParseError(f"{path}: line {i}: no finite values")
            vals = vals[: int(np.nonzero(good)[0][-1]) + 1]
            raw.append((parts[0], vals))
    labels = sorted({lab for lab, _ in raw})
    index = {lab: k for k, lab in enumerate(labels)}
    records = [
        SeriesRecord(vals[None, :], t1=1, label=index[lab], id=f"r{k:06d}")
        for k, (lab, vals) in enumerate(raw)
    ]
    lens = [r.length for r in records]
    meta = DatasetMeta(channels=1, classes=len(labels), t_min=min(lens),
                       t_max=max(lens), class_names=labels)
    return Dataset(meta, records)


# ---------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------

@dataclass
class NormStats:
    """Per-channel min-max statistics, taken from a training split."""

    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(np.array(d["mins"], dtype=np.float64),
                         np.array(d["maxs"], dtype=np.float64))


def minmax_stats(records: list[SeriesRecord]) -> NormStats:
    mins = np.min([r.values.min(axis=1) for r in records], axis=0)
    maxs = np.max([r.values.max(axis=1) for r in records], axis=0)
    return NormStats(mins, maxs)


def apply_minmax(records: list[SeriesRecord], stats: NormStats) -> list[SeriesRecord]:
    """Map channel extrema of the statistics source to exactly 0 and 1."""
    span = stats.maxs - stats.mins
    span = np.where(span == 0, 1.0, span)
    return [
        SeriesRecord((r.values - stats.mins[:, None]) / span[:, None],
                     r.t1, r.label, r.id)
        for r in records
    ]


# ---------------------------------------------------------------------
# augmentation and views
# ---------------------------------------------------------------------

def random_crop(record: SeriesRecord, ratio: float,
                rng: np.random.Generator) -> SeriesRecord:
    """Keep a random contiguous fraction, preserving absolute timestamps.

    The crop length is uniform in [ceil(ratio*T), T], so ratio 1.0 is the
    identity; the start offset is uniform over feasible positions.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"crop ratio must be in (0, 1], got {ratio}")
    t_len = record.length
    lo = max(1, math.ceil(ratio * t_len))
    keep = int(rng.integers(lo, t_len + 1))
    off = int(rng.integers(0, t_len - keep + 1))
    return SeriesRecord(record.values[:, off:off + keep], record.t1 + off,
                        record.label, record.id)


def crop_schedule(epoch: int, ramp_end: int = 800, start: float = 1.0,
                  end: float = 0.1) -> float:
    """Linear ramp of the crop ratio from `start` to `end`, then flat."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch >= ramp_end:
        return end
    return start + (end - start) * epoch / ramp_end


def resample_linear(record: SeriesRecord, target_len: int) -> SeriesRecord:
    """Linear interpolation onto `target_len` equally spaced points.

    Timestamp information is destroyed: the result starts at t1 = 1 and its
    effective sampling rate depends on the original length.
    """
    if target_len < 2:
        raise ValueError("target length must be >= 2")
    t_len = record.length
    if t_len == 1:
        warnings.warn(f"record {record.id}: length 1, replicating the single frame")
        vals = np.repeat(record.values, target_len, axis=1)
        return SeriesRecord(vals, 1, record.label, record.id)
    src = np.arange(t_len, dtype=np.float64)
    dst = np.linspace(0.0, t_len - 1.0, target_len)
    vals = np.stack([np.interp(dst, src, ch) for ch in record.values])
    return SeriesRecord(vals, 1, record.label, record.id)


def half_crops(record: SeriesRecord) -> tuple[SeriesRecord, SeriesRecord]:
    """First and latter halves as independent records (split at ceil(T/2))."""
    t_len = record.length
    if t_len < 2:
        warnings.warn(f"record {record.id}: length 1, both halves equal the record")
        return record, record
    cut = (t_len + 1) // 2
    first = SeriesRecord(record.values[:, :cut], record.t1, record.label,
                         record.id + "/first")
    latter = SeriesRecord(record.values[:, cut:], record.t1 + cut, record.label,
                          record.id + "/latter")
    return first, latter


# ---------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------

@dataclass
class Batch:
    """Padded tensor plus per-sample validity, labels, weights, and lengths."""

    x: Tensor
    valids: list[ValidInterval]
    labels: np.ndarray
    weights: np.ndarray
    lengths: np.ndarray


def make_batch(records: list[SeriesRecord], t_max: int,
               class_weights: np.ndarray | None = None) -> Batch:
    """Zero-pad records at their absolute positions into one [B, D, t_max] tensor."""
    if not records:
        raise ValueError("cannot batch zero records")
    D = records[0].channels
    dtype = get_default_dtype()
    x = np.zeros((len(records), D, t_max), dtype=dtype)
    valids, labels, lengths = [], [], []
    for i, r in enumerate(records):
        r.validate(t_max)
        if r.channels != D:
            raise ValueError(f"record {r.id} has {r.channels} channels, expected {D}")
        lo = r.t1 - 1
        x[i, :, lo:lo + r.length] = r.values
        valids.append(ValidInterval(lo, lo + r.length))
        labels.append(r.label)
        lengths.append(r.length)
    labels = np.array(labels, dtype=np.int64)
    if class_weights is None:
        weights = np.ones(len(records), dtype=dtype)
    else:
        weights = np.asarray(class_weights, dtype=dtype)[labels]
    return Batch(Tensor(x), valids, labels, weights,
                 np.array(lengths, dtype=np.int64))


# ---------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    """Two-class particle-trajectory style generator.

    Latent series span the whole time range; both classes follow an identical
    process before the event and class-dependent coordinate dynamics after it
    (different oscillation frequency, plus a slow downward drift for class 1).
    Observed records are random fragments of the latent series.
    """

    channels: int = 5                 # x, y, size, v_mean, v_std
    t_max: int = 980
    event_time: int = 40
    classes: int = 2
    length_range: tuple[int, int] = (80, 980)
    n_train: int = 2000
    n_test: int = 2000
    osc_period: tuple[float, float] = (16.0, 24.0)   # per class
    osc_amp: tuple[float, float] = (0.10, 0.16)
    # decay and noise smoothness are drawn per series: a fixed decay rate or
    # correlation length would leak the original length through resampling
    osc_decay: tuple[float, float] = (500.0, 1500.0)
    # class-1 drift saturates quickly: late fragments see a level shift that
    # per-series baseline randomness masks, not a learnable slope
    drift_mag: tuple[float, float] = (0.04, 0.08)
    drift_tau: float = 60.0
    ar_phi: tuple[float, float] = (0.85, 0.95)
    ar_eps: float = 0.006
    self_check: bool = True

    def __post_init__(self):
        if self.length_range[0] > self.length_range[1]:
            raise ValueError("infeasible length range")
        if self.length_range[1] > self.t_max:
            raise ValueError("fragment lengths cannot exceed t_max")


def _ar1(rng: np.random.Generator, n: int, phi: float, eps: float) -> np.ndarray:
    noise = rng.normal(0.0, eps, size=n)
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = phi * acc + noise[i]
        out[i] = acc
    return out


def _latent_series(cfg: GeneratorConfig, label: int,
                   rng: np.random.Generator) -> np.ndarray:
    n = cfg.t_max
    t = np.arange(1, n + 1, dtype=np.float64)
    base = rng.uniform([0.35, 0.35, 0.3, 0.4], [0.65, 0.65, 0.7, 0.8])
    phi = rng.uniform(*cfg.ar_phi)
    shared = _ar1(rng, n, phi, cfg.ar_eps)   # couples the brightness channels
    x = base[0] + _ar1(rng, n, phi, cfg.ar_eps)
    y = base[1] + _ar1(rng, n, phi, cfg.ar_eps)
    size = base[2] + _ar1(rng, n, phi, 0.004)
    v_mean = base[3] + shared + _ar1(rng, n, phi, 0.003)
    v_std = 0.2 + shared + _ar1(rng, n, phi, 0.003)

    s = t - cfg.event_time
    post = s >= 0
    decay = rng.uniform(*cfg.osc_decay)
    env = np.where(post, np.exp(-np.maximum(s, 0.0) / decay), 0.0)
    amp = rng.uniform(*cfg.osc_amp)
    phase_x, phase_y = rng.uniform(0.0, 2 * np.pi, size=2)
    omega = 2 * np.pi / cfg.osc_period[label]
    x = x + amp * env * np.sin(omega * s + phase_x)
    y = y + amp * env * np.cos(omega * s + phase_y)
    if label == 1:
        drift = rng.uniform(*cfg.drift_mag)
        y = y - np.where(post, drift * (1.0 - np.exp(-np.maximum(s, 0.0) / cfg.drift_tau)), 0.0)
    return np.stack([x, y, size, v_mean, v_std])


def _mean_separation(latents: np.ndarray, labels: np.ndarray,
                     frames: slice) -> np.ndarray:
    """|z| statistic per channel for a two-sample test on per-series means."""
    per_series = latents[:, :, frames].mean(axis=2)          # [n, D]
    m0, m1 = per_series[labels == 0], per_series[labels == 1]
    se = np.sqrt(m0.var(axis=0) / len(m0) + m1.var(axis=0) / len(m1))
    return np.abs(m0.mean(axis=0) - m1.mean(axis=0)) / se


def generate_synthetic(cfg: GeneratorConfig, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic (train, test) datasets from disjoint latent series."""
    rng = np.random.default_rng(seed)
    splits = []
    for split, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        labels = np.arange(count) % cfg.classes
        latents = np.stack([_latent_series(cfg, int(lab), rng) for lab in labels])
        # the |z| thresholds are calibrated for pools of >= 1000 series;
        # smaller pools would need looser, less meaningful bounds
        if cfg.self_check and count >= 1000:
            pre = _mean_separation(latents, labels, slice(0, cfg.event_time - 1))
            post = _mean_separation(latents, labels, slice(cfg.event_time - 1, None))
            if pre.max() > 6.0:
                raise AssertionError(
                    f"pre-event class separation |z|={pre.max():.1f}; the classes "
                    "must be indistinguishable before the event")
            if post.max() < 8.0:
                raise AssertionError(
                    f"post-event class separation |z|={post.max():.1f}; the classes "
                    "must differ after the event")
        records = []
        for i, lab in enumerate(labels):
            t_len = int(rng.integers(cfg.length_range[0], cfg.length_range[1] + 1))
            t1 = int(rng.integers(1, cfg.t_max - t_len + 2))
            records.append(SeriesRecord(latents[i][:, t1 - 1:t1 - 1 + t_len].copy(),
                                        t1, int(lab), f"{split}-{i:05d}"))
        meta = DatasetMeta(channels=cfg.channels, classes=cfg.classes,
                           t_min=cfg.length_range[0], t_max=cfg.t_max,
                           class_names=["normal", "anomaly"])
        splits.append(Dataset(meta, records))
    return splits[0], splits[1]
