import numpy as np
import pytest

from dbmif import autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def f64():
    with ad.precision(64):
        yield


def numeric_grad(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g
