"""Truncated-uniform latent sampling and sample grids.

Truncation changes the sampling interval itself: z is drawn directly from
Uniform[-c, c]^d. Latents for every bound come from one base draw
u ~ Uniform[0, 1), so grids for different bounds differ only by the scale
of z.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import denormalize, write_ppm
from .errors import ConfigError
from .rng import make_rng
from .tensor import Tensor, no_grad

STATS_HEADER = ["bound", "pixel_variance", "mean_pairwise_distance"]


@dataclass(frozen=True)
class LatentSpec:
    dim: int = 100
    bound: float = 1.0
    seed: int = 0

    def __post_init__(self):
        validate_bound(self.bound)
        if self.dim < 1:
            raise ConfigError(f"latent dim must be >= 1, got {self.dim}")


def validate_bound(c: float) -> float:
    if not (isinstance(c, (int, float)) and 0 < c <= 1):
        raise ConfigError(f"truncation bound must lie in (0, 1], got {c!r}")
    return float(c)


def draw_latent(rng: np.random.Generator, n: int, dim: int, bound: float) -> np.ndarray:
    """n x dim draws from Uniform[-bound, bound]; never outside the interval."""
    if n < 1:
        raise ConfigError(f"number of latents must be >= 1, got {n}")
    u = rng.random((n, dim))
    return bound * (2.0 * u - 1.0)


def sample_latent(n: int, spec: LatentSpec) -> np.ndarray:
    return draw_latent(make_rng(spec.seed, 2), n, spec.dim, spec.bound)


def generate(G, z: np.ndarray) -> np.ndarray:
    """Run G in eval mode on ``z`` and return (N, 3, R, R) float64."""
    was_training = G.training
    G.eval()
    try:
        with no_grad():
            out = G(Tensor(np.asarray(z, dtype=G.dtype))).data
    finally:
        G.train(was_training)
    return out.astype(np.float64)


def tile_grid(images: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Tile (N, 3, R, R) images in [-1, 1] row-major into one (rows*R, cols*R, 3) uint8 image.

    Cells beyond N stay black.
    """
    n, _, r, _ = images.shape
    if n > rows * cols:
        raise ConfigError(f"{n} images do not fit a {rows}x{cols} grid")
    grid = np.zeros((rows * r, cols * r, 3), dtype=np.uint8)
    pix = denormalize(images.transpose(0, 2, 3, 1))
    for i in range(n):
        y, x = divmod(i, cols)
        grid[y * r : (y + 1) * r, x * r : (x + 1) * r] = pix[i]
    return grid


def emit_grid(G, spec: LatentSpec, rows: int, cols: int, path: str | Path | None = None) -> np.ndarray:
    """Sample rows*cols images at the spec's bound and write them as one PPM grid."""
    if rows < 1 or cols < 1:
        raise ConfigError(f"grid must be at least 1x1, got {rows}x{cols}")
    if spec.dim != G.spec.latent_dim:
        raise ConfigError(f"latent dim {spec.dim} does not match generator latent dim {G.spec.latent_dim}")
    grid = tile_grid(generate(G, sample_latent(rows * cols, spec)), rows, cols)
    if path is not None:
        write_ppm(path, grid)
    return grid


@dataclass
class BoundStats:
    bound: float
    pixel_variance: float
    mean_pairwise_distance: float
    distance_stderr: float


@dataclass
class TruncationReport:
    stats: list[BoundStats]
    grids: dict[float, np.ndarray]
    paths: list[Path]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(STATS_HEADER)
            for s in self.stats:
                w.writerow([repr(s.bound), repr(s.pixel_variance), repr(s.mean_pairwise_distance)])


def output_statistics(images: np.ndarray) -> tuple[float, float, float]:
    """Mean per-pixel variance across samples, mean pairwise L2 distance and its standard error.

    The standard error is taken over per-sample mean distances, which are
    closer to independent than the individual pair distances.
    """
    n = images.shape[0]
    flat = images.reshape(n, -1).astype(np.float64)
    pixel_var = float(flat.var(axis=0).mean())
    if n < 2:
        return pixel_var, 0.0, 0.0
    sq = (flat * flat).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T, 0.0)
    dist = np.sqrt(d2)
    iu = np.triu_indices(n, 1)
    mean_dist = float(dist[iu].mean())
    per_sample = dist.sum(axis=1) / (n - 1)
    stderr = float(per_sample.std(ddof=1) / math.sqrt(n)) if n > 2 else 0.0
    return pixel_var, mean_dist, stderr


def compare_truncation(
    G,
    c1: float = 1.0,
    c2: float = 0.5,
    n: int = 64,
    seed: int = 0,
    out_dir: str | Path | None = None,
) -> TruncationReport:
    """Sample ``n`` images under each bound from one shared base draw and compare them."""
    c1, c2 = validate_bound(c1), validate_bound(c2)
    if not c1 > c2:
        raise ConfigError(f"compare_truncation needs c1 > c2, got c1={c1}, c2={c2}")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    base = make_rng(seed, 2).random((n, G.spec.latent_dim))
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    stats, grids, paths = [], {}, []
    for c in (c1, c2):
        imgs = generate(G, c * (2.0 * base - 1.0))
        stats.append(BoundStats(c, *output_statistics(imgs)))
        grids[c] = tile_grid(imgs, rows, cols)
        if out_dir is not None:
            p = Path(out_dir) / f"grid_c{c:g}.ppm"
            write_ppm(p, grids[c])
            paths.append(p)
    report = TruncationReport(stats, grids, paths)
    if out_dir is not None:
        report.write_csv(Path(out_dir) / "stats.csv")
    return report
