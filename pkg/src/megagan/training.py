"""Adversarial training loop.

Every step runs one discriminator update and one generator update. Every
``alt_interval`` steps an extra update is added, alternating between the
generator (first trigger) and the discriminator (second trigger). A loss-band
guard watches the per-step losses and reports sustained excursions.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import epoch_iterator
from .errors import ConfigError, NumericError
from .latent import draw_latent
from .checkpoint import Checkpoint
from .models import Network, NetworkSpec
from .rng import from_state, get_state, make_rng
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

LOSS_LOG_HEADER = ["step", "d_loss", "g_loss", "extra_target", "guard_status"]
G_LOSS_MODES = ("paper_literal", "non_saturating")
SCHEDULE_MODES = ("extra_alternation", "block_alternation")


@dataclass
class TrainConfig:
    alt_interval: int = 50
    d_loss_band: float = 1.0
    g_loss_band: float = 3.0
    guard_window: int = 25
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    g_loss_mode: str = "non_saturating"
    schedule_mode: str = "extra_alternation"
    total_steps: int = 1000
    batch_size: int = 64
    seed: int = 0
    checkpoint_interval: int = 100
    halt_on_warn: bool = False
    history_capacity: int = 10000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            ("alt_interval", self.alt_interval >= 1, "must be >= 1"),
            ("d_loss_band", self.d_loss_band > 0, "must be > 0"),
            ("g_loss_band", self.g_loss_band > 0, "must be > 0"),
            ("guard_window", self.guard_window >= 1, "must be >= 1"),
            ("learning_rate", self.learning_rate > 0, "must be > 0"),
            ("beta1", 0 <= self.beta1 < 1, "must be in [0, 1)"),
            ("beta2", 0 <= self.beta2 < 1, "must be in [0, 1)"),
            ("g_loss_mode", self.g_loss_mode in G_LOSS_MODES, f"must be one of {G_LOSS_MODES}"),
            ("schedule_mode", self.schedule_mode in SCHEDULE_MODES, f"must be one of {SCHEDULE_MODES}"),
            ("total_steps", self.total_steps >= 0, "must be >= 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("checkpoint_interval", self.checkpoint_interval >= 1, "must be >= 1"),
            ("history_capacity", self.history_capacity >= self.guard_window, "must be >= guard_window"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(f"train.{name} {msg} (got {getattr(self, name)!r})")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# losses


def d_loss_from_probs(p_real: Tensor, p_fake: Tensor) -> Tensor:
    """-(mean log D(x) + mean log(1 - D(G(z))))."""
    if p_real.shape[0] != p_fake.shape[0]:
        raise ConfigError(f"real and fake batches differ in size: {p_real.shape[0]} vs {p_fake.shape[0]}")
    return -(T.mean(T.log(p_real)) + T.mean(T.log(1.0 - p_fake)))


def g_loss_from_probs(p_fake: Tensor, mode: str = "non_saturating") -> Tensor:
    if mode == "paper_literal":
        return T.mean(T.log(1.0 - p_fake))
    if mode == "non_saturating":
        return -T.mean(T.log(p_fake))
    raise ConfigError(f"g_loss mode must be one of {G_LOSS_MODES}, got {mode!r}")


def d_loss(D: Network, real_batch, fake_batch) -> Tensor:
    return d_loss_from_probs(D(real_batch), D(fake_batch))


def g_loss(D: Network, fake_batch, mode: str = "non_saturating") -> Tensor:
    return g_loss_from_probs(D(fake_batch), mode)


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class UpdatePlan:
    d_updates: int = 1
    g_updates: int = 1
    extra_target: str = "none"


def plan_step(step: int, alt_interval: int, mode: str = "extra_alternation") -> UpdatePlan:
    """Updates to run at ``step`` (1-based).

    In ``extra_alternation`` mode trigger steps (multiples of ``alt_interval``)
    get one extra update: G on odd triggers, D on even ones. In
    ``block_alternation`` mode every step of an even-numbered K-step block
    gets an extra G update and every step of an odd block an extra D update.
    """
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    if alt_interval < 1:
        raise ConfigError(f"alt_interval must be >= 1, got {alt_interval}")
    if mode == "extra_alternation":
        if step % alt_interval:
            return UpdatePlan()
        target = "G" if (step // alt_interval) % 2 == 1 else "D"
    elif mode == "block_alternation":
        target = "G" if ((step - 1) // alt_interval) % 2 == 0 else "D"
    else:
        raise ConfigError(f"schedule mode must be one of {SCHEDULE_MODES}, got {mode!r}")
    if target == "G":
        return UpdatePlan(1, 2, "G")
    return UpdatePlan(2, 1, "D")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamHyper:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamMoments:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], moments: AdamMoments, hyper: AdamHyper) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``moments``."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    moments.t += 1
    t = moments.t
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = moments.m.setdefault(name, np.zeros_like(p))
        v = moments.v.setdefault(name, np.zeros_like(p))
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * (g * g)
        p -= (hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)).astype(p.dtype)


class Adam:
    """Adam bound to a network's parameter registry."""

    def __init__(self, net: Network, hyper: AdamHyper):
        self.net = net
        self.hyper = hyper
        self.moments = AdamMoments()

    def step(self) -> None:
        params = {k: p.data for k, p in self.net.params.items()}
        grads = {k: p.grad for k, p in self.net.params.items()}
        adam_step(params, grads, self.moments, self.hyper)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k in self.net.params:
            if k in self.moments.m:
                out[f"{prefix}/m/{k}"] = self.moments.m[k]
                out[f"{prefix}/v/{k}"] = self.moments.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str, t: int) -> None:
        self.moments = AdamMoments(t=t)
        for k, p in self.net.params.items():
            if f"{prefix}/m/{k}" in arrays:
                self.moments.m[k] = np.array(arrays[f"{prefix}/m/{k}"], dtype=p.dtype)
                self.moments.v[k] = np.array(arrays[f"{prefix}/v/{k}"], dtype=p.dtype)


# ---------------------------------------------------------------------------
# divergence guard


@dataclass(frozen=True)
class GuardWarning:
    net: str
    since_step: int

    def __str__(self):
        return f"warn_{self.net}@{self.since_step}"


@dataclass(frozen=True)
class GuardStatus:
    warnings: tuple[GuardWarning, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.warnings

    def __str__(self):
        return ";".join(map(str, self.warnings)) if self.warnings else "ok"


def divergence_guard(
    history: Sequence[tuple[int, float, float]],
    d_band: float = 1.0,
    g_band: float = 3.0,
    window: int = 25,
) -> GuardStatus:
    """Check the tail of a ``(step, d_loss, g_loss)`` history against the loss bands.

    A network is flagged when its loss has been at or above its band for the
    last ``window`` recorded steps; ``since_step`` is where that run began.
    Reporting only: nothing here touches training state.
    """
    if len(history) < 1:
        raise ConfigError("divergence_guard needs a non-empty history")
    warnings = []
    for net, col, band in (("D", 1, d_band), ("G", 2, g_band)):
        run = 0
        for i in range(len(history) - 1, -1, -1):
            if not history[i][col] >= band:
                break
            run += 1
        if run >= window:
            warnings.append(GuardWarning(net, int(history[len(history) - run][0])))
    return GuardStatus(tuple(warnings))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainState:
    step: int
    g_opt: Adam
    d_opt: Adam
    rng: np.random.Generator
    loss_history: deque = field(default_factory=deque)
    epoch: int = 0
    cursor: int = 0
    guard: GuardStatus = field(default_factory=GuardStatus)

    @classmethod
    def fresh(cls, G: Network, D: Network, config: TrainConfig) -> "TrainState":
        hyper = AdamHyper(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
        return cls(
            step=0,
            g_opt=Adam(G, hyper),
            d_opt=Adam(D, hyper),
            rng=make_rng(config.seed, 1),
            loss_history=deque(maxlen=config.history_capacity),
        )


@dataclass
class LossRow:
    step: int
    d_loss: float
    g_loss: float
    extra_target: str
    guard_status: str

    def as_csv(self) -> list[str]:
        return [str(self.step), repr(self.d_loss), repr(self.g_loss), self.extra_target, self.guard_status]


class _Batches:
    """Seeded epoch walk over the dataset, resumable from ``(epoch, cursor)``."""

    def __init__(self, n: int, batch_size: int, seed: int, state: TrainState):
        self.n, self.batch_size, self.seed, self.state = n, batch_size, seed, state
        self._order = None

    def next(self) -> np.ndarray:
        st = self.state
        if self._order is None or self._order[0] != st.epoch:
            self._order = (st.epoch, epoch_iterator(self.n, self.batch_size, self.seed, epoch=st.epoch))
        idx = self._order[1][st.cursor]
        st.cursor += 1
        if st.cursor == len(self._order[1]):
            st.epoch += 1
            st.cursor = 0
        return idx


def _real_tensor(dataset, indices, dtype) -> Tensor:
    return Tensor(np.asarray(dataset.images(indices), dtype=dtype))


def train(
    G: Network,
    D: Network,
    dataset,
    config: TrainConfig,
    state: TrainState | None = None,
    log_path: str | Path | None = None,
    checkpoint_fn: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Run the adversarial schedule up to ``config.total_steps``.

    ``dataset`` needs ``__len__`` and ``images(indices) -> (N, 3, R, R)`` in
    [-1, 1]. Latents for every update are fresh draws from the full range
    [-1, 1]. When ``state`` is given training resumes from it. The loss log is
    appended one row per step; ``checkpoint_fn`` is called every
    ``checkpoint_interval`` steps and once at exit.
    """
    n = len(dataset)
    if n == 0:
        raise ConfigError("training dataset is empty")
    R = G.spec.target_resolution
    if D.spec.target_resolution != R:
        raise ConfigError(f"generator resolution {R} != discriminator resolution {D.spec.target_resolution}")
    if getattr(dataset, "resolution", R) != R:
        raise ConfigError(f"dataset resolution {dataset.resolution} != model resolution {R}")
    state = state or TrainState.fresh(G, D, config)
    batches = _Batches(n, config.batch_size, config.seed, state)
    latent_dim = G.spec.latent_dim
    dtype = G.dtype
    G.train()
    D.train()

    def update_d() -> float:
        real = _real_tensor(dataset, batches.next(), dtype)
        z = draw_latent(state.rng, real.shape[0], latent_dim, 1.0).astype(dtype)
        with no_grad():
            fake = G(z).detach()
        D.zero_grad()
        loss = d_loss(D, real, fake)
        loss.backward()
        state.d_opt.step()
        return loss.item()

    def update_g(batch: int) -> float:
        z = draw_latent(state.rng, batch, latent_dim, 1.0).astype(dtype)
        G.zero_grad()
        D.zero_grad()
        loss = g_loss(D, G(z), config.g_loss_mode)
        loss.backward()
        state.g_opt.step()
        D.zero_grad()
        return loss.item()

    log_file = None
    writer = None
    if log_path is not None:
        log_path = Path(log_path)
        new = not log_path.exists() or log_path.stat().st_size == 0
        log_file = open(log_path, "a", newline="")
        writer = csv.writer(log_file)
        if new:
            writer.writerow(LOSS_LOG_HEADER)
    try:
        while state.step < config.total_steps:
            step = state.step + 1
            plan = plan_step(step, config.alt_interval, config.schedule_mode)
            dl = update_d()
            gl = update_g(min(config.batch_size, n))
            if plan.extra_target == "D":
                update_d()
            elif plan.extra_target == "G":
                update_g(min(config.batch_size, n))
            if not (math.isfinite(dl) and math.isfinite(gl)):
                raise NumericError(f"non-finite loss at step {step}: d={dl}, g={gl}")
            state.step = step
            state.loss_history.append((step, dl, gl))
            prev_guard = state.guard
            state.guard = divergence_guard(state.loss_history, config.d_loss_band, config.g_loss_band, config.guard_window)
            row = LossRow(step, dl, gl, plan.extra_target, str(state.guard))
            if writer is not None:
                writer.writerow(row.as_csv())
                log_file.flush()
            if state.guard != prev_guard:
                logger.warning("step %d: loss guard %s", step, state.guard)
            if not state.guard.ok and config.halt_on_warn:
                break
            if checkpoint_fn is not None and step % config.checkpoint_interval == 0:
                checkpoint_fn(state)
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_fn is not None and state.step % config.checkpoint_interval != 0:
        checkpoint_fn(state)
    return state


def read_loss_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def truncate_loss_log(path: str | Path, last_step: int) -> None:
    """Drop rows after ``last_step``; used when resuming from a checkpoint."""
    path = Path(path)
    if not path.exists():
        return
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= last_step] if rows else []
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(keep)


# ---------------------------------------------------------------------------
# checkpoint bridge


def make_checkpoint(G: Network, D: Network, state: TrainState, config: dict | None = None) -> Checkpoint:
    arrays = {}
    arrays.update({f"G/{k}": v for k, v in G.state_arrays().items()})
    arrays.update({f"D/{k}": v for k, v in D.state_arrays().items()})
    arrays.update(state.g_opt.state_arrays("G/adam"))
    arrays.update(state.d_opt.state_arrays("D/adam"))
    arrays["loss_history"] = np.array(list(state.loss_history), dtype=np.float64).reshape(-1, 3)
    scalars = {
        "step": state.step,
        "g_adam_t": state.g_opt.moments.t,
        "d_adam_t": state.d_opt.moments.t,
        "rng": get_state(state.rng),
        "epoch": state.epoch,
        "cursor": state.cursor,
        "history_capacity": state.loss_history.maxlen,
    }
    return Checkpoint(
        generator=G.spec.to_dict(),
        discriminator=D.spec.to_dict(),
        precision=G.spec.dtype,
        arrays=arrays,
        state=scalars,
        config=config or {},
    )


def restore_checkpoint(ckpt: Checkpoint, config: TrainConfig | None = None) -> tuple[Network, Network, TrainState]:
    """Rebuild both networks and the training state; ``config`` supplies optimizer hyperparameters."""
    G = Network.from_spec(NetworkSpec.from_dict(ckpt.generator))
    D = Network.from_spec(NetworkSpec.from_dict(ckpt.discriminator))
    sub = lambda prefix: {k[len(prefix) :]: v for k, v in ckpt.arrays.items() if k.startswith(prefix)}
    G.load_state_arrays(sub("G/"))
    D.load_state_arrays(sub("D/"))
    if config is None:
        config = TrainConfig.from_dict(ckpt.config.get("train", {}))
    st = ckpt.state
    state = TrainState.fresh(G, D, config)
    state.step = int(st.get("step", 0))
    state.g_opt.load_state_arrays(ckpt.arrays, "G/adam", int(st.get("g_adam_t", 0)))
    state.d_opt.load_state_arrays(ckpt.arrays, "D/adam", int(st.get("d_adam_t", 0)))
    if "rng" in st:
        state.rng = from_state(st["rng"])
    state.epoch = int(st.get("epoch", 0))
    state.cursor = int(st.get("cursor", 0))
    hist = ckpt.arrays.get("loss_history", np.zeros((0, 3)))
    state.loss_history = deque(
        ((int(s), float(d), float(g)) for s, d, g in hist),
        maxlen=max(int(st.get("history_capacity", config.history_capacity)), config.guard_window),
    )
    if state.loss_history:
        state.guard = divergence_guard(state.loss_history, config.d_loss_band, config.g_loss_band, config.guard_window)
    return G, D, state
