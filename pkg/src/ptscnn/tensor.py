"""Dense real tensors with reverse-mode automatic differentiation.

Numeric state lives in numpy arrays. Every differentiable operation records
its parents and a backward closure; ``Tensor.backward()`` replays the tape
once in reverse topological order, accumulating gradients with ``+=`` so
shared parameters receive the sum of all their uses.

The default dtype is float64 so finite-difference checks are meaningful;
training code may switch to float32 via :func:`set_default_dtype`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    """Set the dtype used for new tensors ("f32", "f64", or a numpy dtype)."""
    global _default_dtype
    if isinstance(dtype, str):
        dtype = _DTYPES[dtype]
    if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _default_dtype = np.dtype(dtype).type


def get_default_dtype():
    return _default_dtype


class Tensor:
    """A dense array plus an optional gradient accumulator.

    Tensors are immutable once produced by an op; only ``grad`` mutates,
    and only during ``backward`` / ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------

    def backward(self) -> None:
        """Run reverse-mode differentiation from this scalar."""
        if self.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        out = _result(np.add(self.data, other.data), (self, other))
        if out.requires_grad:
            def backward(g):
                _accum(self, _unbroadcast(g, self.shape))
                _accum(other, _unbroadcast(g, other.shape))
            out._backward_fn = backward
        return out

    def __sub__(self, other):
        other = _lift(other)
        out = _result(np.subtract(self.data, other.data), (self, other))
        if out.requires_grad:
            def backward(g):
                _accum(self, _unbroadcast(g, self.shape))
                _accum(other, _unbroadcast(-g, other.shape))
            out._backward_fn = backward
        return out

    def __mul__(self, other):
        other = _lift(other)
        out = _result(np.multiply(self.data, other.data), (self, other))
        if out.requires_grad:
            a, b = self.data, other.data
            def backward(g):
                _accum(self, _unbroadcast(g * b, self.shape))
                _accum(other, _unbroadcast(g * a, other.shape))
            out._backward_fn = backward
        return out

    def __truediv__(self, other):
        other = _lift(other)
        out = _result(np.divide(self.data, other.data), (self, other))
        if out.requires_grad:
            a, b = self.data, other.data
            def backward(g):
                _accum(self, _unbroadcast(g / b, self.shape))
                _accum(other, _unbroadcast(-g * a / (b * b), other.shape))
            out._backward_fn = backward
        return out

    def __neg__(self):
        out = _result(-self.data, (self,))
        if out.requires_grad:
            out._backward_fn = lambda g: _accum(self, -g)
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __rsub__(self, other):
        return _lift(other) - self

    def __rtruediv__(self, other):
        return _lift(other) / self

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = _result(np.sum(self.data, axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            shape, nd = self.shape, self.ndim
            def backward(g):
                if axis is None:
                    _accum(self, np.broadcast_to(g, shape).copy())
                    return
                if not keepdims:
                    axes = axis if isinstance(axis, tuple) else (axis,)
                    g = np.expand_dims(g, tuple(a % nd for a in axes))
                _accum(self, np.broadcast_to(g, shape).copy())
            out._backward_fn = backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def sqrt(self) -> "Tensor":
        out = _result(np.sqrt(self.data), (self,))
        if out.requires_grad:
            y = out.data
            out._backward_fn = lambda g: _accum(self, g / (2.0 * y))
        return out


# ---------------------------------------------------------------------
# internals
# ---------------------------------------------------------------------

def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: g may be a view into (or alias of) another node's gradient
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order of the tape reachable from `root`.

    Iterative so deep training graphs never hit the recursion limit.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    order.reverse()
    return order


def _interval_bounds(valid, n: int, extent: int) -> tuple[np.ndarray, np.ndarray]:
    """Extract per-sample (start, end) arrays from interval-like objects."""
    if len(valid) != n:
        raise ValueError(f"expected {n} valid intervals, got {len(valid)}")
    starts = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.int64)
    for i, iv in enumerate(valid):
        s, e = iv
        if not (0 <= s < e <= extent):
            raise ValueError(
                f"valid interval [{s}, {e}) of sample {i} is empty or outside [0, {extent})"
            )
        starts[i], ends[i] = s, e
    return starts, ends


def valid_mask(valid, n: int, extent: int) -> np.ndarray:
    """[n, extent] float mask with 1 on each sample's valid frames."""
    starts, ends = _interval_bounds(valid, n, extent)
    idx = np.arange(extent)
    return ((idx >= starts[:, None]) & (idx < ends[:, None])).astype(_default_dtype)


# ---------------------------------------------------------------------
# primitive differentiable operations
# ---------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = _result(np.maximum(x.data, 0.0), (x,))
    if out.requires_grad:
        gate = (x.data > 0).astype(x.data.dtype)  # gradient at 0 defined as 0
        out._backward_fn = lambda g: _accum(x, g * gate)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = _result(y, (x,))
    if out.requires_grad:
        out._backward_fn = lambda g: _accum(x, g * y * (1.0 - y))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = _result(y, (x,))
    if out.requires_grad:
        out._backward_fn = lambda g: _accum(x, g * (1.0 - y * y))
    return out


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x[B,F_in] @ weight[F_out,F_in].T + bias[F_out]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"affine shape mismatch: input {x.shape} vs weight {weight.shape}"
        )
    out = _result(x.data @ weight.data.T + bias.data, (x, weight, bias))
    if out.requires_grad:
        def backward(g):
            _accum(x, g @ weight.data)
            _accum(weight, g.T @ x.data)
            _accum(bias, g.sum(axis=0))
        out._backward_fn = backward
    return out


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """Cross-correlation of x[B,C_in,T] with kernel[C_out,C_in,K], stride 1.

    `padding` zero-frames are added on both sides; T_out = T + 2p - K + 1.
    """
    B, C_in, T = x.shape
    C_out, C_k, K = kernel.shape
    if C_k != C_in:
        raise ValueError(f"conv1d channel mismatch: input has {C_in}, kernel expects {C_k}")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    T_pad = T + 2 * padding
    if T_pad < K:
        raise ValueError(f"input too short: T+2p={T_pad} < K={K}")
    T_out = T_pad - K + 1

    if K == 1 and padding == 0:
        return _pointwise_conv(x, kernel, bias)

    if padding:
        xp = np.zeros((B, C_in, T_pad), dtype=x.data.dtype)
        xp[:, :, padding:padding + T] = x.data
    else:
        xp = x.data

    # im2col + one GEMM: col rows are output frames, columns are (C_in, K) taps
    windows = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)
    col = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(B * T_out,
                                                                      C_in * K)
    w_mat = kernel.data.reshape(C_out, C_in * K)
    y = col @ w_mat.T + bias.data
    y = np.ascontiguousarray(y.reshape(B, T_out, C_out).transpose(0, 2, 1))

    out = _result(y, (x, kernel, bias))
    if out.requires_grad:
        def backward(g):
            g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * T_out, C_out)
            if kernel.requires_grad:
                _accum(kernel, (g2.T @ col).reshape(C_out, C_in, K))
            if x.requires_grad:
                dcol = (g2 @ w_mat).reshape(B, T_out, C_in, K)
                dcol = np.ascontiguousarray(dcol.transpose(0, 2, 3, 1))  # [B,C,K,T_out]
                gx = np.zeros((B, C_in, T_pad), dtype=g.dtype)
                for k in range(K):
                    gx[:, :, k:k + T_out] += dcol[:, :, k]
                _accum(x, gx[:, :, padding:padding + T] if padding else gx)
            _accum(bias, g.sum(axis=(0, 2)))
        out._backward_fn = backward
    return out


def _pointwise_conv(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """K=1 conv as batched channel mixing, skipping all layout copies."""
    w = kernel.data[:, :, 0]
    y = np.matmul(w, x.data) + bias.data[None, :, None]
    out = _result(y, (x, kernel, bias))
    if out.requires_grad:
        def backward(g):
            if x.requires_grad:
                _accum(x, np.matmul(w.T, g))
            if kernel.requires_grad:
                gw = np.matmul(g, x.data.transpose(0, 2, 1)).sum(axis=0)
                _accum(kernel, gw[:, :, None])
            _accum(bias, g.sum(axis=(0, 2)))
        out._backward_fn = backward
    return out


def max_pool1d(x: Tensor, window: int, stride: int) -> Tensor:
    """Max over sliding windows; gradient goes to the first maximal element."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    B, C, T = x.shape
    if T < window:
        raise ValueError(f"input length {T} is shorter than pool window {window}")
    T_out = (T - window) // stride + 1
    if stride == window:
        # disjoint windows: a plain reshape view, no gather
        windows = x.data[:, :, :T_out * window].reshape(B, C, T_out, window)
    else:
        starts = np.arange(T_out) * stride
        windows = np.lib.stride_tricks.sliding_window_view(x.data, window, axis=2)
        windows = windows[:, :, starts, :]                   # [B,C,T_out,window]
    arg = np.argmax(windows, axis=3)                         # first occurrence on ties
    y = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]
    out = _result(y, (x,))
    if out.requires_grad:
        src = np.arange(T_out) * stride + arg                # input frame of each max
        bi, ci = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
        flat = (bi[..., None] * C + ci[..., None]) * T + src
        def backward(g):
            gx = np.zeros(B * C * T, dtype=g.dtype)
            if stride >= window:
                gx[flat.ravel()] = g.ravel()   # windows disjoint: plain scatter
            else:
                np.add.at(gx, flat.ravel(), g.ravel())
            _accum(x, gx.reshape(B, C, T))
        out._backward_fn = backward
    return out


def masked_mean(x: Tensor, valid) -> Tensor:
    """Per-sample, per-channel mean of x[B,C,T] over each sample's valid frames.

    Frames outside the interval contribute neither value nor gradient. Empty
    intervals are rejected; callers apply the length>=1 fallback first.
    """
    B, C, T = x.shape
    mask = valid_mask(valid, B, T)                           # [B,T]
    counts = mask.sum(axis=1)                                # [B]
    y = np.einsum("bct,bt->bc", x.data, mask) / counts[:, None]
    out = _result(y, (x,))
    if out.requires_grad:
        w = mask / counts[:, None]                           # [B,T]
        out._backward_fn = lambda g: _accum(x, g[:, :, None] * w[:, None, :])
    return out


def masked_batchnorm(x: Tensor, scale: Tensor, shift: Tensor, mask: np.ndarray,
                     eps: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Batch-normalize x[B,C,T] with statistics over mask[B,T]==1 frames only.

    Every frame is normalized with those statistics (invalid frames are
    discarded by downstream masking, but their gradients still flow through
    the affine part). Returns (output, batch_mean, batch_var); the statistics
    are plain arrays for running-average updates.

    Fused forward/backward: one closed-form rule instead of a dozen
    elementwise tape nodes, which matters at [B, C, 980] batch sizes.
    """
    B, C, t_len = x.shape
    if mask.shape != (B, t_len):
        raise ValueError(f"mask shape {mask.shape} does not match ({B}, {t_len})")
    n = float(mask.sum())
    if n <= 0:
        raise ValueError("masked batch norm needs at least one valid frame")
    m = mask[:, None, :].astype(x.data.dtype)
    mean = np.einsum("bct,bt->c", x.data, mask) / n
    centered = x.data - mean[None, :, None]
    var = np.einsum("bct,bt->c", centered * centered, mask) / n
    std = np.sqrt(var + eps)
    xhat = centered / std[None, :, None]
    gam = scale.data.reshape(C)
    y = gam[None, :, None] * xhat + shift.data.reshape(C)[None, :, None]

    out = _result(y, (x, scale, shift))
    if out.requires_grad:
        def backward(g):
            sum_g = g.sum(axis=(0, 2))
            sum_gx = np.einsum("bct,bct->c", g, xhat)
            _accum(shift, sum_g.reshape(shift.shape))
            _accum(scale, sum_gx.reshape(scale.shape))
            if x.requires_grad:
                coeff = (gam / std)[None, :, None]
                stats_term = m * ((xhat * sum_gx[None, :, None]
                                   + sum_g[None, :, None]) / n)
                _accum(x, coeff * (g - stats_term))
        out._backward_fn = backward
    return out, mean, var


def softmax_cross_entropy(logits: Tensor, labels, sample_weights=None) -> Tensor:
    """Weighted mean of -log softmax(logits)[label]; stabilized by max subtraction.

    Weights default to 1; the mean is normalized by the weight sum.
    """
    B, N = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (B,):
        raise ValueError(f"labels must have shape ({B},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= N:
        raise ValueError(f"label out of range [0, {N})")
    if sample_weights is None:
        w = np.ones(B, dtype=logits.data.dtype)
    else:
        w = np.asarray(sample_weights, dtype=logits.data.dtype)
        if w.shape != (B,) or (w < 0).any():
            raise ValueError("sample_weights must be non-negative with one entry per sample")
    w_total = w.sum()
    if w_total <= 0:
        raise ValueError("sample weights sum to zero")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    nll = log_norm - z[np.arange(B), labels]
    loss = float((w * nll).sum() / w_total)
    out = _result(np.asarray(loss, dtype=logits.data.dtype), (logits,))
    if out.requires_grad:
        probs = np.exp(z - log_norm[:, None])
        def backward(g):
            gl = probs.copy()
            gl[np.arange(B), labels] -= 1.0
            gl *= (w / w_total)[:, None]
            _accum(logits, g * gl)
        out._backward_fn = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along `axis`; gradient splits back to the parts."""
    parts = tuple(tensors)
    out = _result(np.concatenate([t.data for t in parts], axis=axis), parts)
    if out.requires_grad:
        sizes = [t.shape[axis] for t in parts]
        offsets = np.cumsum([0] + sizes)
        def backward(g):
            sl = [slice(None)] * g.ndim
            for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])
        out._backward_fn = backward
    return out


def expand_batch(x: Tensor, batch: int) -> Tensor:
    """Tile x along a new leading batch axis; gradient sums over the batch."""
    out = _result(np.broadcast_to(x.data, (batch,) + x.shape).copy(), (x,))
    if out.requires_grad:
        out._backward_fn = lambda g: _accum(x, g.sum(axis=0))
    return out


def softmax_np(logits: np.ndarray) -> np.ndarray:
    """Plain (non-differentiable) softmax over the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
