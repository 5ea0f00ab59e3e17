import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from megagan.data import (
    ArrayDataset,
    BatchSchedule,
    DatasetManifest,
    ImageDataset,
    batch_size_for,
    center_crop_square,
    decode_ppm,
    denormalize,
    encode_ppm,
    epoch_iterator,
    ingest,
    load_batch,
    normalize,
    read_image,
    resize_bilinear,
    write_ppm,
)
from megagan.errors import ConfigError, DecodeError


def random_image(rng, h, w):
    return rng.integers(0, 256, (h, w, 3), dtype=np.uint8)


# --- PPM ---------------------------------------------------------------------


def test_ppm_header_bytes(rng):
    data = encode_ppm(random_image(rng, 16, 16))
    assert data.startswith(b"P6\n16 16\n255\n")
    assert len(data) == len(b"P6\n16 16\n255\n") + 768


def test_ppm_round_trip(rng, tmp_path):
    img = random_image(rng, 16, 16)
    p = tmp_path / "a.ppm"
    write_ppm(p, img)
    back = read_image(p)
    assert back.tobytes() == img.tobytes()
    assert encode_ppm(back) == p.read_bytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.binary(min_size=432, max_size=432))
def test_ppm_round_trip_property(h, w, raw):
    img = np.frombuffer(raw[: h * w * 3], dtype=np.uint8).reshape(h, w, 3)
    data = encode_ppm(img)
    assert encode_ppm(decode_ppm(data)) == data


def test_ppm_truncated_payload_reports_offset(rng):
    data = encode_ppm(random_image(rng, 4, 4))[:-5]
    with pytest.raises(DecodeError) as e:
        decode_ppm(data)
    assert e.value.offset == len(data)
    assert f"byte offset {len(data)}" in str(e.value)


@pytest.mark.parametrize(
    "blob,offset",
    [(b"P5\n1 1\n255\n\x00", 0), (b"P6\nx 1\n255\n", 3), (b"P6\n1 1\n65535\n" + b"\x00" * 6, 13), (b"P6\n1 1\n255", 10)],
)
def test_ppm_malformed_headers(blob, offset):
    with pytest.raises(DecodeError) as e:
        decode_ppm(blob)
    assert e.value.offset == offset


def test_ppm_header_comments_allowed():
    data = b"P6 # made by hand\n2 1\n# comment\n255\n" + bytes(range(6))
    assert decode_ppm(data).reshape(-1).tolist() == list(range(6))


def test_png_read_via_pillow(rng, tmp_path):
    Image = pytest.importorskip("PIL.Image")
    img = random_image(rng, 5, 7)
    Image.fromarray(img).save(tmp_path / "x.png")
    np.testing.assert_array_equal(read_image(tmp_path / "x.png"), img)


# --- pixel transforms ----------------------------------------------------------


def test_normalize_mid_gray():
    assert normalize(np.full((2, 2, 3), 128))[0, 0, 0] == pytest.approx(128 / 127.5 - 1)
    assert normalize(np.array([0, 255])).tolist() == [-1.0, 1.0]


def test_denormalize_points():
    assert denormalize(np.array([-1.0, 0.0, 1.0])).tolist() == [0, 128, 255]
    assert denormalize(np.array([-5.0, 5.0])).tolist() == [0, 255]


def test_normalize_denormalize_round_trip(rng):
    p = rng.integers(0, 256, 100_000).astype(np.uint8)
    assert np.array_equal(denormalize(normalize(p)), p)


def test_bilinear_checkerboard_hand_computed():
    board = np.array([[0.0, 255.0], [255.0, 0.0]])[..., None]
    # sample positions along each axis: 0, 1/4, 3/4, 1 (half-pixel centres,
    # clamped); value = 255 * (a + b - 2ab)
    expected = np.array(
        [
            [0.0, 63.75, 191.25, 255.0],
            [63.75, 95.625, 159.375, 191.25],
            [191.25, 159.375, 95.625, 63.75],
            [255.0, 191.25, 63.75, 0.0],
        ]
    )
    out = resize_bilinear(board, 4)[..., 0]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_bilinear_same_size_is_identity(rng):
    img = rng.uniform(0, 255, (5, 5, 3))
    np.testing.assert_allclose(resize_bilinear(img, 5), img)


def test_center_crop():
    img = np.arange(2 * 6).reshape(2, 6)[..., None]
    np.testing.assert_array_equal(center_crop_square(img)[..., 0], [[2, 3], [8, 9]])


# --- ingest and batches --------------------------------------------------------


def make_dir(tmp_path, sizes, rng):
    for i, (w, h) in enumerate(sizes):
        write_ppm(tmp_path / f"im{i:02d}.ppm", random_image(rng, h, w))
    return tmp_path


def test_ingest_undersized_fraction(tmp_path, rng):
    sizes = [(8, 8)] * 7 + [(16, 16), (20, 16), (32, 32)]
    m = ingest(make_dir(tmp_path, sizes, rng), 16)
    assert len(m) == 10
    assert m.undersized_fraction == pytest.approx(0.7)


def test_ingest_exact_size_not_upscaled(tmp_path, rng):
    m = ingest(make_dir(tmp_path, [(16, 16)] * 3, rng), 16)
    assert not any(e.upscaled for e in m.entries)


def test_ingest_empty_is_fatal(tmp_path):
    with pytest.raises(ConfigError):
        ingest(tmp_path, 16)


def test_ingest_skips_undecodable(tmp_path, rng):
    make_dir(tmp_path, [(8, 8)], rng)
    (tmp_path / "broken.ppm").write_bytes(b"P6\n4 4\n255\n\x00")
    m = ingest(tmp_path, 16)
    assert len(m) == 1 and len(m.skipped) == 1 and "broken.ppm" in m.skipped[0][0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 64), st.integers(1, 64)), min_size=1, max_size=6), st.integers(1, 64))
def test_upscaled_flag_iff_smaller_than_target(sizes, target):
    import tempfile
    from pathlib import Path

    rng = np.random.default_rng(0)
    with tempfile.TemporaryDirectory() as d:
        m = ingest(make_dir(Path(d), sizes, rng), target)
        for e, (w, h) in zip(m.entries, sizes):
            assert (e.width, e.height) == (w, h)
            assert e.upscaled == (max(w, h) < target)


def test_manifest_csv_round_trip(tmp_path, rng):
    m = ingest(make_dir(tmp_path / "imgs", [(8, 8), (32, 16)], rng), 16)
    m.to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "path,width,height,upscaled"
    back = DatasetManifest.from_csv(tmp_path / "m.csv", 16)
    assert back.entries == m.entries


def test_load_batch_shapes_and_range(tmp_path, rng):
    m = ingest(make_dir(tmp_path, [(8, 8), (24, 16), (40, 40)], rng), 16)
    b = load_batch(m, [0, 1, 2], 16)
    assert b.images.shape == (3, 3, 16, 16)
    assert b.images.min() >= -1 and b.images.max() <= 1
    assert b.upscaled.tolist() == [True, False, False]


def test_load_batch_mid_gray(tmp_path):
    write_ppm(tmp_path / "g.ppm", np.full((4, 4, 3), 128, np.uint8))
    b = load_batch(ingest(tmp_path, 8), [0], 8)
    np.testing.assert_allclose(b.images, 128 / 127.5 - 1)


def test_image_dataset_caches(tmp_path, rng):
    ds = ImageDataset(ingest(make_dir(tmp_path, [(8, 8)] * 3, rng), 8))
    a = ds.images([2, 0])
    assert a.shape == (2, 3, 8, 8)
    np.testing.assert_array_equal(ds.images([0]), a[1:])


def test_array_dataset_rejects_bad_shape():
    with pytest.raises(ConfigError):
        ArrayDataset(np.zeros((2, 3, 8, 4)))


# --- batch schedule ------------------------------------------------------------


def test_schedule_anchors():
    assert batch_size_for(192) == 128
    assert batch_size_for(1024) == 6


def test_schedule_512_power_law():
    exponent = math.log(6 / 128) / math.log(1024 / 192)
    assert exponent == pytest.approx(-1.828, abs=1e-3)
    assert math.floor(128 * (512 / 192) ** exponent) == 21
    assert batch_size_for(512) == 21


def test_schedule_override_wins():
    assert batch_size_for(192, override=4) == 4
    assert batch_size_for(8, override=16) == 16


def test_schedule_out_of_range_needs_override():
    with pytest.raises(ConfigError):
        batch_size_for(128)
    with pytest.raises(ConfigError):
        batch_size_for(2048)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(192, 1024), min_size=2, max_size=2))
def test_schedule_monotone(rs):
    lo, hi = sorted(rs)
    assert batch_size_for(lo) >= batch_size_for(hi) >= 1


def test_schedule_rejects_increasing_anchors():
    with pytest.raises(ConfigError):
        BatchSchedule(((192, 6), (1024, 128)))


# --- epoch iterator ------------------------------------------------------------


def test_epoch_sizes():
    assert [len(b) for b in epoch_iterator(10, 4, seed=0)] == [4, 4, 2]


def test_epoch_seeded():
    a = epoch_iterator(10, 4, seed=3)
    b = epoch_iterator(10, 4, seed=3)
    c = epoch_iterator(10, 4, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50), st.integers(1, 20), st.integers(0, 1000), st.integers(0, 5))
def test_epoch_partition(n, bs, seed, epoch):
    batches = epoch_iterator(n, bs, seed, epoch)
    assert len(batches) == math.ceil(n / bs)
    assert sorted(np.concatenate(batches).tolist()) == list(range(n))
