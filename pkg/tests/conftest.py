import numpy as np
import pytest

from ptscnn import tensor as T


@pytest.fixture(autouse=True)
def float64_mode():
    # gradient checks and determinism assertions rely on 64-bit math
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(np.float64)


def finite_difference(f, x: np.ndarray, indices=None, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f w.r.t. entries of x.

    Independent of the autodiff tape: only calls f on perturbed copies.
    When `indices` is given, entries outside it are left as zero.
    """
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        g.reshape(-1)[i] = (up - down) / (2 * step)
    return g


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, indices=None,
                      rtol: float = 1e-4, atol: float = 1e-7):
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    idx = range(a.size) if indices is None else indices
    for i in idx:
        err = abs(a[i] - n[i])
        bound = atol + rtol * max(abs(a[i]), abs(n[i]))
        assert err <= bound, (
            f"gradient mismatch at flat index {i}: analytic {a[i]!r} vs "
            f"numeric {n[i]!r} (|diff|={err:.3g}, bound={bound:.3g})"
        )


def check_gradients(build_loss, params: list, rng: np.random.Generator,
                    n_points: int = 20, step: float = 1e-5):
    """Compare tape gradients of a scalar loss against finite differences.

    `build_loss` must rebuild the graph from the current parameter data each
    call; `params` are Tensors with requires_grad set.
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    for p in params:
        assert p.grad is not None, "parameter missed by backward pass"
        size = p.data.size
        if size <= n_points:
            indices = list(range(size))
        else:
            indices = sorted(rng.choice(size, size=n_points, replace=False).tolist())
        numeric = finite_difference(lambda: build_loss().item(), p.data,
                                    indices=indices, step=step)
        assert_grad_close(p.grad, numeric, indices=indices)
