import numpy as np
import pytest

from megagan.tensor import Tensor

# lines collected by test_acceptance and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar f() w.r.t. every element of arr (mutated in place)."""
    g = np.empty_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def naive_conv2d(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[ni, oi, i, j] = (patch * w[oi]).sum() + (b[oi] if b is not None else 0.0)
    return out


def naive_conv_transpose2d(x, w, b, stride, pad, out_pad):
    """Scatter definition: every input pixel stamps its weighted kernel into the output."""
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    ho = (h - 1) * stride - 2 * pad + k + out_pad
    wo = (wd - 1) * stride - 2 * pad + k + out_pad
    full = np.zeros((n, cout, ho + 2 * pad + k, wo + 2 * pad + k))
    for ni in range(n):
        for ci in range(cin):
            for i in range(h):
                for j in range(wd):
                    full[ni, :, i * stride : i * stride + k, j * stride : j * stride + k] += x[ni, ci, i, j] * w[ci]
    out = full[:, :, pad : pad + ho, pad : pad + wo]
    if b is not None:
        out = out + b[None, :, None, None]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)
