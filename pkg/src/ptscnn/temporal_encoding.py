"""Learnable per-timestamp encoding concatenated to the input channels.

The encoding is a table with one learned column per absolute timestamp.
Inputs are zero-padded to the full time range while preserving where they
sit in absolute time, so concatenating the whole table channel-wise aligns
each frame with the encoding of its own timestamp.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import tensor as T
from .rf import ValidInterval
from .tensor import Tensor


class TemporalEncoding:
    """Table of shape [channels, t_max]; column t encodes timestamp t+1."""

    def __init__(self, channels: int, t_max: int, rng: np.random.Generator,
                 cyclic: bool = False, init_std: float = 0.05):
        self.channels = channels
        self.t_max = t_max
        self.cyclic = cyclic
        self.table = Tensor(rng.normal(0.0, init_std, size=(channels, t_max)),
                            requires_grad=True)

    def column(self, timestamp: int) -> np.ndarray:
        """Encoding for a 1-based timestamp; cyclic mode wraps modulo t_max."""
        idx = timestamp - 1
        if self.cyclic:
            idx %= self.t_max
        if not 0 <= idx < self.t_max:
            raise ValueError(f"timestamp {timestamp} outside [1, {self.t_max}]")
        return self.table.data[:, idx]

    def apply(self, x: Tensor, valid: list[ValidInterval]) -> Tensor:
        """Concatenate the table under x[B, D, t_max]; validity is unchanged."""
        B, _, t_len = x.shape
        if t_len != self.t_max:
            raise ValueError(f"input spans {t_len} frames, encoding table has {self.t_max}")
        return T.concat([x, T.expand_batch(self.table, B)], axis=1)

    def parameters(self):
        return [("table", self.table)]


def pad_preserving_position(values: np.ndarray, t1: int, t_max: int
                            ) -> tuple[np.ndarray, ValidInterval]:
    """Zero-pad a [D, T] series to [D, t_max] at its absolute time position.

    A series starting at timestamp t1 occupies frames [t1-1, t1-1+T); the
    returned interval marks exactly those frames.
    """
    D, t_len = values.shape
    if t1 < 1:
        raise ValueError(f"start timestamp must be >= 1, got {t1}")
    if t1 + t_len - 1 > t_max:
        raise ValueError(
            f"series of length {t_len} starting at t1={t1} overruns t_max={t_max}"
        )
    out = np.zeros((D, t_max), dtype=values.dtype)
    out[:, t1 - 1:t1 - 1 + t_len] = values
    return out, ValidInterval(t1 - 1, t1 - 1 + t_len)


def te_correlation(te: TemporalEncoding) -> np.ndarray:
    """Pearson correlation between table columns (over channels).

    Zero-variance columns get 0 in every entry involving them, with a warning.
    """
    E = te.table.data
    if E.shape[0] < 2:
        raise ValueError("correlation needs at least two encoding channels")
    centered = E - E.mean(axis=0, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=0))
    degenerate = norms == 0
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} zero-variance encoding column(s); "
                      "their correlations are reported as 0")
    safe = np.where(degenerate, 1.0, norms)
    unit = centered / safe
    corr = unit.T @ unit
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    np.clip(corr, -1.0, 1.0, out=corr)
    return corr
