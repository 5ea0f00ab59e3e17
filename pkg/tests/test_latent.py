import numpy as np
import pytest

from megagan.errors import ConfigError
from megagan.latent import (
    LatentSpec,
    compare_truncation,
    draw_latent,
    emit_grid,
    generate,
    output_statistics,
    sample_latent,
    tile_grid,
    validate_bound,
)
from megagan.data import read_image
from megagan.models import build_generator


@pytest.fixture(scope="module")
def G8():
    return build_generator(8, latent_dim=16, width_multiplier=0.125, seed=3)


@pytest.mark.parametrize("c", [1e-12, 0.4, 0.5, 1.0])
def test_draws_stay_in_bounds(c):
    z = sample_latent(20_000, LatentSpec(dim=5, bound=c, seed=1))
    assert z.shape == (20_000, 5)
    assert np.all(np.abs(z) <= c)


def test_tiny_bound_is_nearly_constant():
    z = sample_latent(1000, LatentSpec(dim=4, bound=1e-12))
    assert np.abs(z).max() <= 1e-12


def test_uniform_moments_at_04():
    z = sample_latent(200_000, LatentSpec(dim=1, bound=0.4, seed=9))
    expected = 0.4**2 / 3
    assert abs(z.mean()) < 0.005
    assert abs(z.var() - expected) / expected < 0.05


@pytest.mark.parametrize("c", [0.0, -0.5, 1.5, float("nan"), "0.5"])
def test_invalid_bounds(c):
    with pytest.raises(ConfigError):
        validate_bound(c)


def test_seed_controls_draws():
    a = sample_latent(8, LatentSpec(dim=3, seed=5))
    b = sample_latent(8, LatentSpec(dim=3, seed=5))
    c = sample_latent(8, LatentSpec(dim=3, seed=6))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_bounds_share_a_base_draw():
    a = sample_latent(8, LatentSpec(dim=3, bound=1.0, seed=2))
    b = sample_latent(8, LatentSpec(dim=3, bound=0.25, seed=2))
    np.testing.assert_allclose(b, 0.25 * a)


def test_draw_latent_rejects_empty():
    with pytest.raises(ConfigError):
        draw_latent(np.random.default_rng(0), 0, 3, 1.0)


def test_tile_grid_layout():
    imgs = np.stack([np.full((3, 32, 32), v) for v in np.linspace(-1, 1, 16)])
    grid = tile_grid(imgs, 4, 4)
    assert grid.shape == (128, 128, 3) and grid.dtype == np.uint8
    assert grid[0, 0, 0] == 0 and grid[-1, -1, 0] == 255
    assert grid[0, 32, 0] == np.floor((np.linspace(-1, 1, 16)[1] + 1) * 127.5 + 0.5)


def test_tile_grid_unused_cells_black():
    grid = tile_grid(np.ones((3, 3, 4, 4)), 2, 2)
    assert grid[4:, 4:].max() == 0 and grid[:4, :4].min() == 255


def test_tile_grid_overflow():
    with pytest.raises(ConfigError):
        tile_grid(np.zeros((5, 3, 4, 4)), 2, 2)


def test_generate_leaves_training_mode(G8):
    G8.train()
    out = generate(G8, np.zeros((2, 16)))
    assert G8.training and out.dtype == np.float64 and out.shape == (2, 3, 8, 8)


def test_emit_grid_deterministic(G8, tmp_path):
    spec = LatentSpec(dim=16, bound=0.4, seed=1)
    a = emit_grid(G8, spec, 3, 5, tmp_path / "a.ppm")
    b = emit_grid(G8, spec, 3, 5, tmp_path / "b.ppm")
    assert a.shape == (24, 40, 3) and np.array_equal(a, b)
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
    np.testing.assert_array_equal(read_image(tmp_path / "a.ppm"), a)


def test_emit_grid_latent_mismatch(G8):
    with pytest.raises(ConfigError):
        emit_grid(G8, LatentSpec(dim=10), 2, 2)


def test_output_statistics_known_values():
    imgs = np.array([[0.0, 0.0], [3.0, 4.0]]).reshape(2, 2, 1, 1)
    var, dist, _ = output_statistics(imgs)
    assert dist == pytest.approx(5.0)
    assert var == pytest.approx((2.25 + 4.0) / 2)


def test_compare_truncation_requires_order(G8):
    with pytest.raises(ConfigError):
        compare_truncation(G8, 0.5, 0.5)
    with pytest.raises(ConfigError):
        compare_truncation(G8, 0.5, 1.0)


def test_compare_truncation_outputs(G8, tmp_path):
    report = compare_truncation(G8, 1.0, 0.5, n=10, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["grid_c0.5.ppm", "grid_c1.ppm", "stats.csv"]
    lines = (tmp_path / "stats.csv").read_text().splitlines()
    assert lines[0] == "bound,pixel_variance,mean_pairwise_distance" and len(lines) == 3
    assert report.grids[1.0].shape == (24, 32, 3)


def test_diversity_shrinks_with_bound(G8):
    # an untrained G is close to linear near z = 0, so distances scale with c
    dists = [compare_truncation(G8, 1.0, c, n=64, seed=4).stats[1] for c in (0.25, 0.5)]
    full = compare_truncation(G8, 1.0, 0.5, n=64, seed=4).stats[0]
    means = [s.mean_pairwise_distance for s in dists] + [full.mean_pairwise_distance]
    errs = [s.distance_stderr for s in dists] + [full.distance_stderr]
    for (m_lo, e_lo), (m_hi, e_hi) in zip(zip(means, errs), zip(means[1:], errs[1:])):
        assert m_lo <= m_hi + 2 * np.hypot(e_lo, e_hi)
