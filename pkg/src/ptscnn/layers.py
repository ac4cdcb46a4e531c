"""Valid-region-aware differentiable layers.

Each layer exposes ``parameters()`` as an ordered list of (name, Tensor) so
models can be checkpointed as flat named arrays. Forward passes thread one
ValidInterval per sample alongside the feature tensor; batch statistics and
pooled means only ever read valid frames.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rf import LayerGeom, ValidInterval, clamp_nonempty, propagate_valid
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def masked_gap(x: Tensor, valid: list[ValidInterval]) -> Tensor:
    """Global average pool over the time axis, reading valid frames only."""
    return T.masked_mean(x, valid)


class Conv1d:
    """Stride-1 cross-correlation with symmetric zero padding."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, padding: int | None = None):
        self.padding = (kernel - 1) // 2 if padding is None else padding
        fan_in = in_channels * kernel
        self.kernel = uniform_init(rng, (out_channels, in_channels, kernel), fan_in)
        self.bias = uniform_init(rng, (out_channels,), fan_in)

    @property
    def geom(self) -> LayerGeom:
        return LayerGeom(kernel=self.kernel.shape[2], stride=1, padding=self.padding)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.kernel, self.bias, padding=self.padding)

    def parameters(self):
        return [("kernel", self.kernel), ("bias", self.bias)]


class MaskedBatchNorm:
    """Batch normalization whose statistics ignore padded frames.

    Training mode pools mean/variance over the valid frames of all samples
    jointly, then updates running statistics with momentum. Invalid frames
    are still normalized (downstream masking discards them) but never
    contribute to the statistics. Eval mode uses the running statistics only.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.scale = Tensor(np.ones((channels, 1)), requires_grad=True)
        self.shift = Tensor(np.zeros((channels, 1)), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=T.get_default_dtype())
        self.running_var = np.ones(channels, dtype=T.get_default_dtype())

    def forward(self, x: Tensor, valid: list[ValidInterval], mode: str) -> Tensor:
        B, C, t_len = x.shape
        if mode == "train":
            mask = T.valid_mask(valid, B, t_len)
            out, mean, var = T.masked_batchnorm(x, self.scale, self.shift, mask,
                                                self.eps)
            mom = self.momentum
            self.running_mean = (1 - mom) * self.running_mean + mom * mean
            self.running_var = (1 - mom) * self.running_var + mom * var
            return out
        if mode == "eval":
            mu = self.running_mean[None, :, None]
            sd = np.sqrt(self.running_var + self.eps)[None, :, None]
            xhat = (x - Tensor(mu)) * Tensor(1.0 / sd)
            return xhat * self.scale + self.shift
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    def batch_stats(self, x_data: np.ndarray, valid) -> tuple[np.ndarray, np.ndarray]:
        """Masked per-channel mean/variance of a raw batch (no grad, no update).

        Valid frames are gathered into a contiguous array before reducing, so
        the result is bit-identical whether the batch is padded or physically
        trimmed (the reduction order cannot depend on the padding amount).
        """
        B, _, t_len = x_data.shape
        mask = T.valid_mask(valid, B, t_len).astype(bool)
        gathered = x_data.transpose(1, 0, 2)[:, mask]      # [C, n_valid]
        return gathered.mean(axis=1), gathered.var(axis=1)

    def parameters(self):
        return [("scale", self.scale), ("shift", self.shift)]

    def state_arrays(self):
        """Non-learnable state that still belongs in checkpoints."""
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class ConvBlock:
    """conv -> masked norm -> activation (xN) -> optional residual -> optional pool.

    Residual blocks add the (possibly projected) block input before the final
    activation, which requires stride-1 same-padding convs and no pooling.
    The returned valid intervals are clamped to length >= 1 after every layer
    so inputs shorter than the receptive field still flow through.
    """

    def __init__(self, in_channels: int, channels: int, kernels: list[int],
                 rng: np.random.Generator, pool: tuple[int, int] | None = None,
                 residual: bool = False, batch_norm: bool = True):
        if residual and pool is not None:
            raise ValueError("residual blocks do not support pooling")
        self.convs: list[Conv1d] = []
        self.norms: list[MaskedBatchNorm | None] = []
        c_in = in_channels
        for k in kernels:
            self.convs.append(Conv1d(c_in, channels, k, rng))
            self.norms.append(MaskedBatchNorm(channels) if batch_norm else None)
            c_in = channels
        self.pool = pool
        self.residual = residual
        self.out_channels = channels
        self.shortcut: Conv1d | None = None
        if residual and in_channels != channels:
            self.shortcut = Conv1d(in_channels, channels, 1, rng, padding=0)

    @property
    def layer_geoms(self) -> list[LayerGeom]:
        geoms = [c.geom for c in self.convs]
        if self.pool is not None:
            geoms.append(LayerGeom(kernel=self.pool[0], stride=self.pool[1]))
        return geoms

    def label(self) -> str:
        parts = [f"conv{c.kernel.shape[2]}" for c in self.convs]
        s = " ".join(parts)
        if self.residual:
            s += " +res"
        if self.pool is not None:
            s += f" pool{self.pool[0]}/{self.pool[1]}"
        return s

    def forward(self, x: Tensor, valid: list[ValidInterval], mode: str):
        y = x
        vs = valid
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            y = conv.forward(y)
            vs = [clamp_nonempty(propagate_valid(v, conv.geom), y.shape[2]) for v in vs]
            if norm is not None:
                y = norm.forward(y, vs, mode)
            last = i == len(self.convs) - 1
            if not (last and self.residual):
                y = T.relu(y)
        if self.residual:
            sc = x if self.shortcut is None else self.shortcut.forward(x)
            y = T.relu(y + sc)
        if self.pool is not None:
            w, s = self.pool
            y = T.max_pool1d(y, w, s)
            geom = LayerGeom(kernel=w, stride=s)
            vs = [clamp_nonempty(propagate_valid(v, geom), y.shape[2]) for v in vs]
        return y, vs

    def parameters(self):
        out = []
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            out += [(f"conv{i}.{n}", p) for n, p in conv.parameters()]
            if norm is not None:
                out += [(f"norm{i}.{n}", p) for n, p in norm.parameters()]
        if self.shortcut is not None:
            out += [(f"shortcut.{n}", p) for n, p in self.shortcut.parameters()]
        return out

    def state_arrays(self):
        out = []
        for i, norm in enumerate(self.norms):
            if norm is not None:
                out += [(f"norm{i}.{n}", a) for n, a in norm.state_arrays()]
        return out


class Affine:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = uniform_init(rng, (out_features, in_features), in_features)
        self.bias = uniform_init(rng, (out_features,), in_features)

    def forward(self, x: Tensor) -> Tensor:
        return T.affine(x, self.weight, self.bias)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class LSTMAggregator:
    """Long short-term memory over a short feature sequence, zero initial state.

    Consumes an ordered list of [B, F] tensors and returns the final hidden
    state. Per-sample lengths may differ within the batch: once a sample's
    length is exhausted its state freezes, so trailing entries cannot leak in.
    """

    GATES = ("input", "forget", "output", "cell")

    def __init__(self, in_features: int, hidden: int, rng: np.random.Generator):
        self.in_features = in_features
        self.hidden = hidden
        self.w_x = {}
        self.w_h = {}
        self.b = {}
        for gate in self.GATES:
            self.w_x[gate] = uniform_init(rng, (hidden, in_features), in_features)
            self.w_h[gate] = uniform_init(rng, (hidden, hidden), hidden)
            init = np.ones(hidden) if gate == "forget" else np.zeros(hidden)
            self.b[gate] = Tensor(init, requires_grad=True)

    def forward(self, sequence: list[Tensor], lengths=None) -> Tensor:
        if not sequence:
            raise ValueError("recurrent aggregation needs a non-empty sequence")
        B = sequence[0].shape[0]
        if lengths is not None:
            lengths = np.asarray(lengths)
            if lengths.min() < 1:
                raise ValueError("every sample needs a sequence length of at least 1")
        h = Tensor(np.zeros((B, self.hidden)))
        c = Tensor(np.zeros((B, self.hidden)))
        zero_h = Tensor(np.zeros(self.hidden))
        for t, z in enumerate(sequence):
            if z.shape[0] != B or z.shape[1] != self.in_features:
                raise ValueError(f"sequence entry {t} has shape {z.shape}")
            pre = {
                g: T.affine(z, self.w_x[g], self.b[g]) + T.affine(h, self.w_h[g], zero_h)
                for g in self.GATES
            }
            i_g = T.sigmoid(pre["input"])
            f_g = T.sigmoid(pre["forget"])
            o_g = T.sigmoid(pre["output"])
            cand = T.tanh(pre["cell"])
            c_new = f_g * c + i_g * cand
            h_new = o_g * T.tanh(c_new)
            if lengths is None or (lengths > t).all():
                h, c = h_new, c_new
            else:
                active = Tensor((lengths > t).astype(T.get_default_dtype())[:, None])
                h = h_new * active + h * (1.0 - active)
                c = c_new * active + c * (1.0 - active)
        return h

    def parameters(self):
        out = []
        for gate in self.GATES:
            out += [
                (f"{gate}.w_x", self.w_x[gate]),
                (f"{gate}.w_h", self.w_h[gate]),
                (f"{gate}.bias", self.b[gate]),
            ]
        return out
