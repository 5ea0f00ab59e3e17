"""Resolution-parameterized DCGAN generator and discriminator.

The generator projects z to a ``base x base`` feature map and then doubles
the spatial size once per stage with 5x5 stride-2 transposed convolutions
until the target resolution is reached. The discriminator mirrors that
ladder with stride-2 convolutions and ends in a single sigmoid unit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .rng import make_rng
from .tensor import Tensor

KERNEL = 5
STRIDE = 2
PAD = 2
MAX_CHANNELS = 1024
IMAGE_CHANNELS = 3
LEAK = 0.2
INIT_STD = 0.02

DTYPES = {"float32": np.float32, "float64": np.float64}


def resolve_resolution(resolution: int) -> tuple[int, int]:
    """Split ``resolution`` into ``(base, stages)`` with ``base * 2**stages == resolution``.

    Base 4 is preferred; base 6 covers the 192 family.
    """
    r = int(resolution)
    for base in (4, 6):
        if r >= 2 * base and r % base == 0:
            q = r // base
            if q & (q - 1) == 0:
                return base, q.bit_length() - 1
    raise ConfigError(
        f"unsupported resolution {resolution}: must be 4*2^L or 6*2^L with L >= 1 (valid bases 4 and 6); "
        f"valid resolutions up to 1024 are {', '.join(map(str, valid_resolutions()))}"
    )


def valid_resolutions(limit: int = 1024) -> list[int]:
    out = set()
    for base in (4, 6):
        r = base * 2
        while r <= limit:
            out.add(r)
            r *= 2
    return sorted(out)


def channel_schedule(base: int, stages: int, width_multiplier: float) -> list[int]:
    """Feature channels at each spatial level, base level first.

    1024 * width_multiplier at the base size, halved per doubling, floored at
    8 * width_multiplier (and at 1).
    """
    if width_multiplier <= 0:
        raise ConfigError(f"width_multiplier must be positive, got {width_multiplier}")
    floor = max(1, int(8 * width_multiplier))
    top = MAX_CHANNELS * width_multiplier
    return [max(int(top / 2**s), floor) for s in range(stages)]


@dataclass
class NetworkSpec:
    role: str
    target_resolution: int
    base_spatial: int
    num_stages: int
    channels: list[int]
    latent_dim: int = 0
    width_multiplier: float = 1.0
    kernel: int = KERNEL
    stride: int = STRIDE
    dtype: str = "float32"

    @classmethod
    def for_generator(cls, target_resolution, latent_dim=100, width_multiplier=1.0, dtype="float32"):
        if latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {latent_dim}")
        base, stages = resolve_resolution(target_resolution)
        return cls(
            role="generator",
            target_resolution=int(target_resolution),
            base_spatial=base,
            num_stages=stages,
            channels=channel_schedule(base, stages, width_multiplier),
            latent_dim=int(latent_dim),
            width_multiplier=float(width_multiplier),
            dtype=dtype,
        )

    @classmethod
    def for_discriminator(cls, target_resolution, width_multiplier=1.0, dtype="float32"):
        base, stages = resolve_resolution(target_resolution)
        return cls(
            role="discriminator",
            target_resolution=int(target_resolution),
            base_spatial=base,
            num_stages=stages,
            channels=channel_schedule(base, stages, width_multiplier),
            width_multiplier=float(width_multiplier),
            dtype=dtype,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, fan_in, fan_out, dtype, bias=True):
        super().__init__(name)
        self.params["weight"] = Tensor(np.zeros((fan_in, fan_out), dtype), requires_grad=True)
        if bias:
            self.params["bias"] = Tensor(np.zeros(fan_out, dtype), requires_grad=True)

    def forward(self, x, training):
        b = self.params.get("bias")
        if b is None:
            b = Tensor(np.zeros(self.params["weight"].shape[1], x.dtype))
        return T.dense(x, self.params["weight"], b)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, name, shape):
        super().__init__(name)
        self.shape = tuple(shape)

    def forward(self, x, training):
        return T.reshape(x, (x.shape[0], *self.shape))


class Conv(Layer):
    kind = "conv2d"

    def __init__(self, name, cin, cout, dtype, bias=True):
        super().__init__(name)
        self.params["weight"] = Tensor(np.zeros((cout, cin, KERNEL, KERNEL), dtype), requires_grad=True)
        if bias:
            self.params["bias"] = Tensor(np.zeros(cout, dtype), requires_grad=True)

    def forward(self, x, training):
        return T.conv2d(x, self.params["weight"], self.params.get("bias"), stride=STRIDE, pad=PAD)


class ConvTranspose(Layer):
    kind = "conv_transpose2d"

    def __init__(self, name, cin, cout, dtype, bias=True):
        super().__init__(name)
        self.params["weight"] = Tensor(np.zeros((cin, cout, KERNEL, KERNEL), dtype), requires_grad=True)
        if bias:
            self.params["bias"] = Tensor(np.zeros(cout, dtype), requires_grad=True)

    def forward(self, x, training):
        # k=5, s=2, p=2, out_pad=1 doubles the spatial size exactly
        return T.conv_transpose2d(x, self.params["weight"], self.params.get("bias"), stride=STRIDE, pad=PAD, out_pad=1)


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, name, channels, dtype):
        super().__init__(name)
        self.params["gamma"] = Tensor(np.ones(channels, dtype), requires_grad=True)
        self.params["beta"] = Tensor(np.zeros(channels, dtype), requires_grad=True)
        self.buffers["running_mean"] = np.zeros(channels, dtype)
        self.buffers["running_var"] = np.ones(channels, dtype)

    def forward(self, x, training):
        return T.batch_norm(
            x,
            self.params["gamma"],
            self.params["beta"],
            training=training,
            running_mean=self.buffers["running_mean"],
            running_var=self.buffers["running_var"],
        )


class Activation(Layer):
    def __init__(self, name, kind):
        super().__init__(name)
        self.kind = kind

    def forward(self, x, training):
        if self.kind == "leaky_relu":
            return T.leaky_relu(x, LEAK)
        return getattr(T, self.kind)(x)


class Network:
    """Ordered layer stack with a flat ``name -> Tensor`` parameter registry."""

    def __init__(self, spec: NetworkSpec, layers: list[Layer]):
        self.spec = spec
        self.layers = layers
        self.training = True
        self.trace: list[tuple[str, tuple[int, ...]]] = []
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        for layer in layers:
            for k, p in layer.params.items():
                self.params[f"{layer.name}.{k}"] = p
            for k, b in layer.buffers.items():
                self.buffers[f"{layer.name}.{k}"] = b

    @classmethod
    def from_spec(cls, spec: NetworkSpec) -> "Network":
        if spec.role == "generator":
            return cls(spec, _generator_layers(spec))
        if spec.role == "discriminator":
            return cls(spec, _discriminator_layers(spec))
        raise ConfigError(f"unknown network role {spec.role!r}")

    @property
    def dtype(self):
        return DTYPES[self.spec.dtype]

    @property
    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def train(self, mode: bool = True) -> "Network":
        self.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        self._check_input(x)
        self.trace = [("input", x.shape)]
        for layer in self.layers:
            x = layer.forward(x, self.training)
            self.trace.append((layer.name, x.shape))
        return x

    __call__ = forward

    def _check_input(self, x: Tensor) -> None:
        s = self.spec
        if s.role == "generator":
            want = (s.latent_dim,)
            got = x.shape[1:]
        else:
            want = (IMAGE_CHANNELS, s.target_resolution, s.target_resolution)
            got = x.shape[1:]
        if x.data.ndim != len(want) + 1 or got != want:
            raise ShapeError(f"{s.role} expects input (N, {', '.join(map(str, want))}), got {x.shape}")

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data for k, v in self.params.items()}
        out.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            src = arrays[f"param/{k}"]
            if src.shape != p.shape:
                raise ShapeError(f"parameter {k}: stored shape {src.shape} != network shape {p.shape}")
            p.data = np.array(src, dtype=self.dtype)
        for k, b in self.buffers.items():
            b[...] = arrays[f"buffer/{k}"]


def _generator_layers(spec: NetworkSpec) -> list[Layer]:
    dt = DTYPES[spec.dtype]
    base, ch = spec.base_spatial, spec.channels
    layers: list[Layer] = [
        # layers feeding batch norm carry no bias: the normalization cancels it
        Dense("project", spec.latent_dim, base * base * ch[0], dt, bias=False),
        Reshape("reshape", (ch[0], base, base)),
        BatchNorm("project_bn", ch[0], dt),
        Activation("project_act", "relu"),
    ]
    for i in range(spec.num_stages):
        last = i == spec.num_stages - 1
        cout = IMAGE_CHANNELS if last else ch[i + 1]
        layers.append(ConvTranspose(f"stage{i + 1}.convt", ch[i], cout, dt, bias=last))
        if last:
            layers.append(Activation("output", "tanh"))
        else:
            layers.append(BatchNorm(f"stage{i + 1}.bn", cout, dt))
            layers.append(Activation(f"stage{i + 1}.act", "relu"))
    return layers


def _discriminator_layers(spec: NetworkSpec) -> list[Layer]:
    dt = DTYPES[spec.dtype]
    base, ch, n = spec.base_spatial, spec.channels, spec.num_stages
    layers: list[Layer] = []
    cin = IMAGE_CHANNELS
    for i in range(n):
        # stage i maps spatial level n-i to level n-i-1
        cout = ch[n - 1 - i]
        layers.append(Conv(f"stage{i + 1}.conv", cin, cout, dt, bias=i == 0))
        if i > 0:
            layers.append(BatchNorm(f"stage{i + 1}.bn", cout, dt))
        layers.append(Activation(f"stage{i + 1}.act", "leaky_relu"))
        cin = cout
    layers.append(Reshape("flatten", (base * base * cin,)))
    layers.append(Dense("head", base * base * cin, 1, dt))
    layers.append(Activation("output", "sigmoid"))
    return layers


def init_params(network: Network, seed: int) -> None:
    """Weights ~ N(0, 0.02), batch-norm gamma ~ N(1, 0.02), biases and beta 0.

    Draws are made in float64 in registry order and then cast, so the
    parameters for a given seed agree across element types up to rounding.
    """
    rng = make_rng(seed)
    for name, p in network.params.items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "weight":
            vals = rng.normal(0.0, INIT_STD, p.shape)
        elif leaf == "gamma":
            vals = rng.normal(1.0, INIT_STD, p.shape)
        else:
            vals = np.zeros(p.shape)
        p.data = vals.astype(network.dtype)
        p.grad = None
    for name, b in network.buffers.items():
        b[...] = 0.0 if name.endswith("running_mean") else 1.0


def build_generator(
    target_resolution: int,
    latent_dim: int = 100,
    width_multiplier: float = 1.0,
    dtype: str = "float32",
    seed: int | None = 0,
) -> Network:
    net = Network.from_spec(NetworkSpec.for_generator(target_resolution, latent_dim, width_multiplier, dtype))
    if seed is not None:
        init_params(net, seed)
    return net


def build_discriminator(
    target_resolution: int,
    width_multiplier: float = 1.0,
    dtype: str = "float32",
    seed: int | None = 1,
) -> Network:
    net = Network.from_spec(NetworkSpec.for_discriminator(target_resolution, width_multiplier, dtype))
    if seed is not None:
        init_params(net, seed)
    return net
