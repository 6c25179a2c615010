import numpy as np
import pytest

from mlgan import autodiff as ad


def finite_diff(f, x0: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar f over a flat copy of x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    out = np.zeros_like(x0)
    flat = out.ravel()
    base = x0.ravel()
    for i in range(base.size):
        xp = base.copy()
        xm = base.copy()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * h)
    return out


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def random_mlp_graph(tape: ad.Tape, rng, sizes, x_val, slope=0.2):
    """Random leaky-relu MLP ending in a scalar mean; returns (out, params)."""
    params = []
    h = tape.const(np.atleast_2d(x_val))
    for i, (fi, fo) in enumerate(zip(sizes, sizes[1:])):
        w = tape.leaf(rng.normal(size=(fo, fi)) / np.sqrt(fi), requires_grad=True)
        b = tape.leaf(rng.normal(size=fo) * 0.1, requires_grad=True)
        params.extend([w, b])
        h = ad.add(ad.matmul(h, ad.transpose(w)), b)
        if i < len(sizes) - 2:
            h = ad.leaky_relu(h, slope)
    return ad.mean_all(h), params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
