"""Static receptive-field and valid-region analysis of conv/pool stacks.

Everything here is pure integer arithmetic over layer geometry. The central
recurrence, with ``rf_0 = jump_0 = 1``:

    rf_l   = rf_{l-1} + (kernel_l - 1) * jump_{l-1}
    jump_l = jump_{l-1} * stride_l

``left_offset`` tracks the input index of the leftmost frame touched by
output feature 0 (negative when padding reaches past the first frame), which
makes the empirical perturbation check exact even for padded stacks.

A feature frame is *valid* when its whole input window lies inside the valid
region of the layer input, so valid features are computed purely from real
data, never from padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence


class ValidInterval(NamedTuple):
    """Half-open frame range [start, end); empty when start == end."""

    start: int
    end: int

    @property
    def length(self) -> int:
        return max(0, self.end - self.start)

    @property
    def is_empty(self) -> bool:
        return self.end <= self.start


@dataclass(frozen=True)
class LayerGeom:
    """Geometry of one conv or pool layer."""

    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid layer geometry {self}")

    def out_extent(self, t: int) -> int:
        n = (t + 2 * self.padding - self.kernel) // self.stride + 1
        if n < 1:
            raise ValueError(f"extent {t} too short for {self}")
        return n


@dataclass(frozen=True)
class RfEntry:
    """Receptive field of one feature element of layer `index` on the input."""

    index: int
    rf: int
    jump: int
    left_offset: int

    def window(self, feature: int) -> tuple[int, int]:
        """Half-open input range feeding the given output feature."""
        lo = self.left_offset + feature * self.jump
        return lo, lo + self.rf


def rf_of_stack(layers: Sequence[LayerGeom]) -> list[RfEntry]:
    """Per-layer receptive field, jump, and left offset for a layer stack."""
    if not layers:
        raise ValueError("rf_of_stack requires at least one layer")
    entries: list[RfEntry] = []
    rf, jump, left = 1, 1, 0
    for i, geom in enumerate(layers):
        left = left - geom.padding * jump
        rf = rf + (geom.kernel - 1) * jump
        jump = jump * geom.stride
        entries.append(RfEntry(index=i, rf=rf, jump=jump, left_offset=left))
    return entries


def propagate_valid(interval: ValidInterval, geom: LayerGeom) -> ValidInterval:
    """Map a valid input interval through one layer.

    An output frame is valid iff its full window lies inside the input valid
    interval. For a stride-1 conv with kernel 2k+1 and padding k this sends
    input-valid [T0, T0+T) to output-valid [T0+k, T0+T-k). May return an
    empty interval (positioned so a later length-1 clamp lands sensibly).
    """
    k, s, p = geom.kernel, geom.stride, geom.padding
    # output frame o covers padded-input frames [o*s, o*s+k) = input [o*s-p, o*s-p+k)
    lo = -(-(interval.start + p) // s)          # ceil((start+p)/s)
    hi = (interval.end + p - k) // s + 1
    if interval.is_empty or hi <= lo:
        pos = (lo + hi) // 2
        return ValidInterval(pos, pos)
    return ValidInterval(lo, hi)


def clamp_nonempty(interval: ValidInterval, extent: int) -> ValidInterval:
    """Force a minimum length of one frame.

    Empty intervals become a length-1 interval at the frame nearest their
    midpoint, clipped into [0, extent). Non-empty intervals pass through.
    """
    if extent < 1:
        raise ValueError("extent must be >= 1")
    if not interval.is_empty:
        return interval
    mid = (interval.start + interval.end) // 2
    pos = min(max(mid, 0), extent - 1)
    return ValidInterval(pos, pos + 1)


def truncation_table(block_rfs: Sequence[int], lengths: Sequence[int]) -> dict[int, int]:
    """For each length T, how many blocks have rf <= T (strict drop above)."""
    rfs = list(block_rfs)
    if any(b >= a for a, b in zip(rfs[1:], rfs)):
        raise ValueError("block_rfs must be strictly increasing")
    return {int(t): sum(1 for r in rfs if r <= t) for t in lengths}


def surviving_blocks(block_rfs: Sequence[int], length: int) -> int:
    return sum(1 for r in block_rfs if r <= length)


# ---------------------------------------------------------------------
# report rendering (the `rf-report` CLI output)
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class RfReport:
    """Block-level receptive-field summary of a backbone."""

    block_labels: list[str]          # e.g. "conv7 + pool2/2"
    block_entries: list[RfEntry]     # entry at each block boundary (block output)
    final: RfEntry                   # last layer of the stack

    @property
    def block_rfs(self) -> list[int]:
        return [e.rf for e in self.block_entries]

    def to_dict(self) -> dict:
        return {
            "blocks": [
                {
                    "block": i + 1,
                    "layers": label,
                    "rf": e.rf,
                    "jump": e.jump,
                    "min_length": e.rf,
                }
                for i, (label, e) in enumerate(zip(self.block_labels, self.block_entries))
            ],
            "final_rf": self.final.rf,
            "final_jump": self.final.jump,
        }

    def render(self) -> str:
        rows = [("block", "layers", "rf", "jump", "min length")]
        for i, (label, e) in enumerate(zip(self.block_labels, self.block_entries)):
            rows.append((str(i + 1), label, str(e.rf), str(e.jump), str(e.rf)))
        widths = [max(len(r[c]) for r in rows) for c in range(5)]
        lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"final rf {self.final.rf}, jump {self.final.jump}")
        return "\n".join(lines)


def report_for_blocks(block_layers: Sequence[Sequence[LayerGeom]],
                      block_labels: Sequence[str]) -> RfReport:
    """Build an RfReport from layers grouped per block (boundary = block output)."""
    flat: list[LayerGeom] = []
    boundaries: list[int] = []
    for layers in block_layers:
        flat.extend(layers)
        boundaries.append(len(flat) - 1)
    entries = rf_of_stack(flat)
    return RfReport(
        block_labels=list(block_labels),
        block_entries=[entries[b] for b in boundaries],
        final=entries[-1],
    )
