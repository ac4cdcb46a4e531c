"""Declarative assembly of full classifiers from config.

A model is: optional temporal encoding -> convolutional backbone (with valid
intervals threaded through) -> aggregation head -> affine classifier. Configs
round-trip through JSON; named presets ship with the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .heads import Head, HeadConfig
from .layers import Affine, ConvBlock
from .rf import RfReport, report_for_blocks
from .temporal_encoding import TemporalEncoding
from .tensor import Tensor

LENGTH_POLICIES = ("variable_masked", "fixed_interpolate")


@dataclass(frozen=True)
class BlockSpec:
    kernels: tuple[int, ...]
    channels: int
    pool: tuple[int, int] | None = None
    residual: bool = False


@dataclass(frozen=True)
class TeSpec:
    channels: int | None = None       # None -> same as the input channel count
    cyclic: bool = False


@dataclass(frozen=True)
class ModelConfig:
    backbone: tuple[BlockSpec, ...]
    input_channels: int | None = None
    classes: int | None = None
    t_max: int | None = None
    head: HeadConfig = field(default_factory=HeadConfig)
    te: TeSpec | None = None
    length_policy: str = "variable_masked"
    resample_target: int | None = None   # fixed_interpolate only; None -> t_max
    fc_hidden: int = 64
    fc_layers: int = 2
    batch_norm: bool = True
    name: str = ""

    def __post_init__(self):
        if self.length_policy not in LENGTH_POLICIES:
            raise ValueError(f"length_policy must be one of {LENGTH_POLICIES}")
        if self.te is not None and self.length_policy == "fixed_interpolate":
            raise ValueError(
                "temporal encoding requires variable_masked inputs: interpolation "
                "destroys the timestamps the encoding indexes"
            )
        if self.fc_layers not in (1, 2):
            raise ValueError("fc_layers must be 1 or 2")

    @property
    def is_resolved(self) -> bool:
        return None not in (self.input_channels, self.classes, self.t_max)

    def resolved(self, input_channels: int, classes: int, t_max: int) -> "ModelConfig":
        """Fill dataset-dependent fields that a preset leaves open."""
        return replace(
            self,
            input_channels=self.input_channels or input_channels,
            classes=self.classes or classes,
            t_max=self.t_max or t_max,
        )

    # -- JSON ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_channels": self.input_channels,
            "classes": self.classes,
            "t_max": self.t_max,
            "length_policy": self.length_policy,
            "resample_target": self.resample_target,
            "backbone": [
                {
                    "kernels": list(b.kernels),
                    "channels": b.channels,
                    "pool": list(b.pool) if b.pool else None,
                    "residual": b.residual,
                }
                for b in self.backbone
            ],
            "te": None if self.te is None else
                 {"channels": self.te.channels, "cyclic": self.te.cyclic},
            "head": {
                "variant": self.head.variant,
                "projection_channels": self.head.projection_channels,
                "include_input_level": self.head.include_input_level,
                "recurrent_hidden": self.head.recurrent_hidden,
            },
            "classifier": {"hidden": self.fc_hidden, "layers": self.fc_layers},
            "batch_norm": self.batch_norm,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        blocks = tuple(
            BlockSpec(
                kernels=tuple(b["kernels"]),
                channels=b["channels"],
                pool=tuple(b["pool"]) if b.get("pool") else None,
                residual=b.get("residual", False),
            )
            for b in d["backbone"]
        )
        te = d.get("te")
        head = d.get("head", {})
        cls = d.get("classifier", {})
        return ModelConfig(
            backbone=blocks,
            input_channels=d.get("input_channels"),
            classes=d.get("classes"),
            t_max=d.get("t_max"),
            head=HeadConfig(
                variant=head.get("variant", "adaptive_multi_scale"),
                projection_channels=head.get("projection_channels", 64),
                include_input_level=head.get("include_input_level", True),
                recurrent_hidden=head.get("recurrent_hidden", 64),
            ),
            te=None if te is None else TeSpec(channels=te.get("channels"),
                                              cyclic=te.get("cyclic", False)),
            length_policy=d.get("length_policy", "variable_masked"),
            resample_target=d.get("resample_target"),
            fc_hidden=cls.get("hidden", 64),
            fc_layers=cls.get("layers", 2),
            batch_norm=d.get("batch_norm", True),
            name=d.get("name", ""),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        return ModelConfig.from_dict(json.loads(text))


def load_config(path_or_preset: str | Path) -> ModelConfig:
    """Load a config from a JSON file path, or by preset name."""
    p = Path(path_or_preset)
    if p.suffix == ".json" or p.exists():
        return ModelConfig.from_json(p.read_text())
    return preset_config(str(path_or_preset))


def preset_config(name: str) -> ModelConfig:
    name = name.replace("-", "_")
    ref = resources.files("ptscnn").joinpath(f"presets/{name}.json")
    if not ref.is_file():
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return ModelConfig.from_json(ref.read_text())


def preset_names() -> list[str]:
    root = resources.files("ptscnn").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


@dataclass
class PredictionOutput:
    """Forward-pass results for one batch."""

    logits: Tensor
    probabilities: np.ndarray
    predicted: np.ndarray
    features: np.ndarray     # z_f, the head output


class Model:
    """A built classifier with deterministic, seed-driven initialization."""

    def __init__(self, cfg: ModelConfig, seed: int):
        if not cfg.is_resolved:
            raise ValueError("config leaves input_channels/classes/t_max open; "
                             "call cfg.resolved(...) with dataset metadata first")
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)

        c_in = cfg.input_channels
        self.te: TemporalEncoding | None = None
        if cfg.te is not None:
            c_e = cfg.te.channels or cfg.input_channels
            self.te = TemporalEncoding(c_e, cfg.t_max, rng, cyclic=cfg.te.cyclic)
            c_in += c_e

        self.blocks: list[ConvBlock] = []
        c = c_in
        for spec in cfg.backbone:
            block = ConvBlock(c, spec.channels, list(spec.kernels), rng,
                              pool=spec.pool, residual=spec.residual,
                              batch_norm=cfg.batch_norm)
            self.blocks.append(block)
            c = spec.channels

        self.rf_report: RfReport = report_for_blocks(
            [b.layer_geoms for b in self.blocks], [b.label() for b in self.blocks])
        self._check_extent()

        self._input_tap = (cfg.head.variant != "gap" and cfg.head.include_input_level)
        tap_channels = ([c_in] if self._input_tap else []) + \
                       [b.out_channels for b in self.blocks]
        self.head = Head(cfg.head, tap_channels, self.rf_report.block_rfs, rng)

        self.fc: list[Affine] = []
        f_in = self.head.out_features
        if cfg.fc_layers == 2:
            self.fc.append(Affine(f_in, cfg.fc_hidden, rng))
            f_in = cfg.fc_hidden
        self.fc.append(Affine(f_in, cfg.classes, rng))

    # -- structure -------------------------------------------------------

    def _check_extent(self) -> None:
        t = self.input_extent
        for block in self.blocks:
            for geom in block.layer_geoms:
                t = geom.out_extent(t)  # raises when a pool window cannot fit

    @property
    def input_extent(self) -> int:
        if self.cfg.length_policy == "fixed_interpolate":
            return self.cfg.resample_target or self.cfg.t_max
        return self.cfg.t_max

    def parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        if self.te is not None:
            out += [(f"te.{n}", p) for n, p in self.te.parameters()]
        for i, b in enumerate(self.blocks):
            out += [(f"block{i}.{n}", p) for n, p in b.parameters()]
        out += [(f"head.{n}", p) for n, p in self.head.parameters()]
        for i, a in enumerate(self.fc):
            out += [(f"fc{i}.{n}", p) for n, p in a.parameters()]
        return out

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    # -- forward ---------------------------------------------------------

    def forward(self, batch, mode: str = "eval") -> PredictionOutput:
        logits, features = self._run(batch, mode)
        probs = T.softmax_np(logits.data)
        return PredictionOutput(
            logits=logits,
            probabilities=probs,
            predicted=np.argmax(probs, axis=1),
            features=features,
        )

    def logits(self, batch, mode: str = "eval") -> Tensor:
        return self._run(batch, mode)[0]

    def _run(self, batch, mode: str) -> tuple[Tensor, np.ndarray]:
        x, valids = batch.x, list(batch.valids)
        if x.shape[1] != self.cfg.input_channels:
            raise ValueError(
                f"batch has {x.shape[1]} channels, model expects {self.cfg.input_channels}")
        if x.shape[2] != self.input_extent:
            raise ValueError(
                f"batch spans {x.shape[2]} frames, model expects {self.input_extent}")
        if self.te is not None:
            x = self.te.apply(x, valids)
        taps: list[tuple[Tensor, list]] = []
        if self._input_tap:
            taps.append((x, valids))
        f, vs = x, valids
        for block in self.blocks:
            f, vs = block.forward(f, vs, mode)
            taps.append((f, vs))
        z = self.head.forward(taps, batch.lengths)
        h = z
        for i, layer in enumerate(self.fc):
            h = layer.forward(h)
            if i < len(self.fc) - 1:
                h = T.relu(h)
        return h, z.data

    def loss(self, batch, mode: str = "train") -> Tensor:
        logits = self.logits(batch, mode)
        return T.softmax_cross_entropy(logits, batch.labels, batch.weights)

    def prepare_batch(self, records, class_weights=None):
        """Batch records under this model's length policy.

        fixed_interpolate resamples every record to the fixed extent first;
        variable_masked pads to t_max at the records' absolute positions.
        """
        from .data import make_batch, resample_linear
        if self.cfg.length_policy == "fixed_interpolate":
            target = self.input_extent
            records = [resample_linear(r, target) for r in records]
            return make_batch(records, target, class_weights)
        return make_batch(records, self.cfg.t_max, class_weights)

    # -- checkpoints -------------------------------------------------------

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [(n, p.data) for n, p in self.parameters()]
        for i, b in enumerate(self.blocks):
            out += [(f"block{i}.{n}", a) for n, a in b.state_arrays()]
        return out

    def save(self, path) -> None:
        ckpt.save_checkpoint(path, self.named_arrays())

    def load(self, path) -> None:
        stored = dict(ckpt.load_checkpoint(path))
        own = dict(self.named_arrays())
        if set(stored) != set(own):
            missing = set(own) - set(stored)
            extra = set(stored) - set(own)
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        dtype = T.get_default_dtype()
        for name, p in self.parameters():
            arr = stored[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(dtype)
        for i, b in enumerate(self.blocks):
            for n, a in b.state_arrays():
                a[...] = stored[f"block{i}.{n}"].astype(dtype)


def build_model(cfg: ModelConfig, seed: int) -> Model:
    return Model(cfg, seed)
