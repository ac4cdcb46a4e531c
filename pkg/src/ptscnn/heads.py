"""Feature-aggregation heads that turn per-block feature maps into one vector.

Four variants:

* ``gap``                  - masked global average pool of the last block only
* ``multi_scale``          - pointwise-projected masked GAP of every tap,
                             concatenated (no truncation; short inputs fall
                             back to the clamped length-1 interval)
* ``adaptive_scale``       - the projected GAP of the deepest tap whose
                             receptive field fits the sample length
* ``adaptive_multi_scale`` - the ordered sequence of projected GAPs from all
                             fitting taps, aggregated by a recurrent module

Taps are the block outputs, optionally preceded by the network input itself
(receptive field 1), which guarantees a non-empty sequence for any length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv1d, LSTMAggregator, masked_gap
from .rf import ValidInterval, surviving_blocks
from .tensor import Tensor

VARIANTS = ("gap", "multi_scale", "adaptive_scale", "adaptive_multi_scale")


@dataclass(frozen=True)
class HeadConfig:
    variant: str = "adaptive_multi_scale"
    projection_channels: int = 64
    include_input_level: bool = True
    recurrent_hidden: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown head variant {self.variant!r}; choose from {VARIANTS}")


def sequence_lengths(block_rfs, sample_lengths, include_input_level: bool) -> np.ndarray:
    """Per-sample count of taps whose receptive field fits the sample.

    The input-level tap has receptive field 1 and always fits. Without it, a
    sample shorter than the first block's receptive field would produce an
    empty sequence, which is an error.
    """
    base = 1 if include_input_level else 0
    out = np.array([base + surviving_blocks(block_rfs, int(t)) for t in sample_lengths],
                   dtype=np.int64)
    if out.min() < 1:
        raise ValueError(
            "a sample is shorter than every block's receptive field; "
            "enable include_input_level so the input-level feature keeps the "
            "sequence non-empty"
        )
    return out


def project_and_pool(feature: Tensor, projection: Conv1d,
                     valid: list[ValidInterval]) -> Tensor:
    """Pointwise conv to the common width, then masked global average pool."""
    return masked_gap(projection.forward(feature), valid)


class Head:
    """Aggregation head over tapped features.

    `tap_channels` lists the channel width of each tap in order; for every
    variant except ``gap`` the first tap is the network input when
    ``include_input_level`` is set.
    """

    def __init__(self, cfg: HeadConfig, tap_channels: list[int], block_rfs: list[int],
                 rng: np.random.Generator):
        self.cfg = cfg
        self.block_rfs = list(block_rfs)
        self.projections: list[Conv1d] = []
        self.recurrent: LSTMAggregator | None = None
        if cfg.variant == "gap":
            self.out_features = tap_channels[-1]
            return
        width = cfg.projection_channels
        self.projections = [Conv1d(c, width, 1, rng, padding=0) for c in tap_channels]
        if cfg.variant == "multi_scale":
            self.out_features = width * len(tap_channels)
        elif cfg.variant == "adaptive_scale":
            self.out_features = width
        else:
            self.recurrent = LSTMAggregator(width, cfg.recurrent_hidden, rng)
            self.out_features = cfg.recurrent_hidden

    @property
    def tap_rfs(self) -> list[int]:
        """Receptive field of each tap (input-level tap sees a single frame)."""
        if self.cfg.include_input_level:
            return [1] + self.block_rfs
        return list(self.block_rfs)

    def forward(self, taps: list[tuple[Tensor, list[ValidInterval]]],
                sample_lengths: np.ndarray) -> Tensor:
        """Aggregate tapped (feature, valid-intervals) pairs into z_f [B, out]."""
        cfg = self.cfg
        if cfg.variant == "gap":
            feature, valid = taps[-1]
            return masked_gap(feature, valid)

        zs = [project_and_pool(f, proj, v)
              for (f, v), proj in zip(taps, self.projections)]
        if cfg.variant == "multi_scale":
            return T.concat(zs, axis=1)

        rfs = self.tap_rfs
        if cfg.variant == "adaptive_scale":
            counts = sequence_lengths(self.block_rfs, sample_lengths,
                                      cfg.include_input_level)
            deepest = counts - 1
            dtype = T.get_default_dtype()
            picked = None
            for i, z in enumerate(zs):
                sel = Tensor((deepest == i).astype(dtype)[:, None])
                contrib = z * sel
                picked = contrib if picked is None else picked + contrib
            return picked

        lengths = sequence_lengths(self.block_rfs, sample_lengths,
                                   cfg.include_input_level)
        assert len(rfs) == len(zs)
        return self.recurrent.forward(zs, lengths=lengths)

    def parameters(self):
        out = []
        for i, proj in enumerate(self.projections):
            out += [(f"proj{i}.{n}", p) for n, p in proj.parameters()]
        if self.recurrent is not None:
            out += [(f"recurrent.{n}", p) for n, p in self.recurrent.parameters()]
        return out
