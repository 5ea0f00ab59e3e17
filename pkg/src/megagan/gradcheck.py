"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .models import Network, build_discriminator, build_generator
from .rng import make_rng
from .tensor import Tensor
from .training import d_loss_from_probs, g_loss_from_probs

DEFAULT_TOL = 1e-4
BATCH_NORM_TOL = 1e-3


@dataclass
class GradCheckReport:
    per_param: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.per_param.values(), default=0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max|a - n| / max(max|a|, max|n|, floor).

    The floor keeps truly-zero gradients from turning round-off into a 100% error.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``f()`` with central differences.

    Every element of every tensor in ``params`` is perturbed by +-h.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ConfigError(f"grad_check needs float64 parameters; {name} is {p.dtype}")
    for p in params.values():
        p.grad = None
    out = f()
    out.backward()
    report = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.empty_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
        report[name] = relative_error(analytic, numeric)
    for p in params.values():
        p.grad = None
    return GradCheckReport(report)


# ---------------------------------------------------------------------------
# suite


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _leaf(rng, shape, low=-1.0, high=1.0, away_from_zero=0.0) -> Tensor:
    x = rng.uniform(low, high, shape)
    if away_from_zero:
        x = np.where(x < 0, -1.0, 1.0) * np.maximum(np.abs(x), away_from_zero)
    return Tensor(x, requires_grad=True)


def _projected(out_fn: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    """Turn a tensor-valued function into the scalar sum(out * R) for a fixed random R."""
    weights = {}

    def f():
        out = out_fn()
        if "w" not in weights:
            weights["w"] = Tensor(rng.normal(size=out.shape))
        return T.sum_(out * weights["w"])

    return f


def _corrupted_tanh(x: Tensor) -> Tensor:
    # negative control: derivative deliberately off by 5%
    y = np.tanh(x.data)
    return T._make(y, "tanh", (x,), lambda g: (1.05 * g * (1.0 - y * y),))


def _toy_net(net: Network, seed: int, std: float = 0.3) -> Network:
    # 0.02-std weights at this width leave G-side gradients near 1e-6,
    # where finite-difference round-off dominates; rescale for a well-posed check
    rng = make_rng(seed, 9)
    for name, p in net.params.items():
        if name.endswith(".weight"):
            p.data = rng.normal(0.0, std, p.shape)
    return net


def _net_params(*nets: Network) -> dict[str, Tensor]:
    return {f"{n.spec.role[0].upper()}.{k}": p for n in nets for k, p in n.params.items()}


def _cases(rng, corrupted: bool):
    tanh_fn = _corrupted_tanh if corrupted else T.tanh

    x = _leaf(rng, (2, 3, 8, 8))
    w = _leaf(rng, (4, 3, 5, 5))
    b = _leaf(rng, (4,))
    yield "conv2d", _projected(lambda: T.conv2d(x, w, b, stride=2, pad=2), rng), {"input": x, "weight": w, "bias": b}, DEFAULT_TOL

    x = _leaf(rng, (1, 2, 3, 3))
    w = _leaf(rng, (2, 1, 4, 4))
    b = _leaf(rng, (1,))
    yield "conv_transpose2d", _projected(lambda: T.conv_transpose2d(x, w, b, stride=2), rng), {"input": x, "weight": w, "bias": b}, DEFAULT_TOL

    x = _leaf(rng, (4, 2, 3, 3))
    gamma = _leaf(rng, (2,), 0.5, 1.5)
    beta = _leaf(rng, (2,))
    yield "batch_norm", _projected(lambda: T.batch_norm(x, gamma, beta), rng), {"input": x, "gamma": gamma, "beta": beta}, BATCH_NORM_TOL

    for name, fn in (
        ("relu", T.relu),
        ("leaky_relu", lambda t: T.leaky_relu(t, 0.2)),
        ("tanh", tanh_fn),
        ("sigmoid", T.sigmoid),
    ):
        x = _leaf(rng, (3, 5), -2.0, 2.0, away_from_zero=1e-3)
        yield name, _projected(lambda fn=fn, x=x: fn(x), rng), {"input": x}, DEFAULT_TOL

    x = _leaf(rng, (3, 4))
    w = _leaf(rng, (4, 5))
    b = _leaf(rng, (5,))
    yield "dense", _projected(lambda: T.dense(x, w, b), rng), {"input": x, "weight": w, "bias": b}, DEFAULT_TOL

    x = _leaf(rng, (2, 3, 4))
    yield "reshape", _projected(lambda: T.reshape(x, (6, 4)), rng), {"input": x}, DEFAULT_TOL

    a = _leaf(rng, (3, 4))
    c = _leaf(rng, (4,))
    yield "add", _projected(lambda: T.add(a, c), rng), {"a": a, "b": c}, DEFAULT_TOL

    x = _leaf(rng, (3, 4))
    yield "mean", lambda: T.mean(x), {"input": x}, DEFAULT_TOL

    x = _leaf(rng, (3, 4), 0.1, 2.0)
    yield "log", _projected(lambda: T.log(x), rng), {"input": x}, DEFAULT_TOL

    # two transposed-convolution stages: 4 -> 8 -> 16
    G = _toy_net(build_generator(16, latent_dim=3, width_multiplier=1 / 256, dtype="float64"), 11)
    z = Tensor(rng.uniform(-1, 1, (3, 3)))
    yield "toy_generator", _projected(lambda: G(z), rng), _net_params(G), DEFAULT_TOL

    # second stage carries batch norm
    D = _toy_net(build_discriminator(16, width_multiplier=1 / 256, dtype="float64"), 12)
    imgs = Tensor(rng.uniform(-1, 1, (3, 3, 16, 16)))
    yield "toy_discriminator", _projected(lambda: D(imgs), rng), _net_params(D), BATCH_NORM_TOL

    G8 = _toy_net(build_generator(8, latent_dim=2, width_multiplier=1 / 256, dtype="float64"), 13)
    D8 = _toy_net(build_discriminator(8, width_multiplier=1 / 256, dtype="float64"), 14)
    z = Tensor(rng.uniform(-1, 1, (4, 2)))
    real = Tensor(rng.uniform(-1, 1, (4, 3, 8, 8)))

    def gan_loss():
        fake = G8(z)
        return d_loss_from_probs(D8(real), D8(fake)) + g_loss_from_probs(D8(fake), "non_saturating")

    yield "gan_composition", gan_loss, _net_params(G8, D8), DEFAULT_TOL


PRESETS = ("default", "corrupted")


def run_suite(preset: str = "default", seed: int = 0) -> list[CheckResult]:
    """Check every layer primitive and a composed toy G/D at float64.

    ``corrupted`` swaps in a tanh with a wrong derivative as a negative control.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown grad-check preset {preset!r}; choose from {PRESETS}")
    rng = make_rng(seed, 5)
    results = []
    for name, f, params, tol in _cases(rng, preset == "corrupted"):
        results.append(CheckResult(name, grad_check(f, params).max_error, tol))
    return results
