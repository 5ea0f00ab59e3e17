"""Image I/O, dataset ingestion and batching.

Images travel as ``(H, W, 3)`` uint8 arrays on disk and as ``(N, 3, R, R)``
floats in [-1, 1] once batched. Binary PPM (P6, maxval 255) is the
bit-exact format; PNG and other formats are read through Pillow when it is
installed.
"""

from __future__ import annotations

import csv
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DecodeError, ImageIOError
from .rng import make_rng

IMAGE_SUFFIXES = (".ppm", ".png", ".jpg", ".jpeg", ".bmp")
MANIFEST_HEADER = ["path", "width", "height", "upscaled"]

# ---------------------------------------------------------------------------
# PPM


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ConfigError(f"PPM encoding needs an (H, W, 3) uint8 array, got {pixels.shape} {pixels.dtype}")
    h, w = pixels.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


_TOKEN = re.compile(rb"\d+")


def decode_ppm(data: bytes, path=None) -> np.ndarray:
    """Parse a binary P6 image with maxval 255. Header comments are allowed."""
    if data[:2] != b"P6":
        raise DecodeError("not a binary PPM: missing P6 magic", offset=0, path=path)
    pos = 2
    values = []
    while len(values) < 3:
        # whitespace and comments between header tokens
        while pos < len(data) and (data[pos : pos + 1].isspace() or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            else:
                pos += 1
        m = _TOKEN.match(data, pos)
        if m is None:
            raise DecodeError("malformed PPM header: expected a decimal number", offset=pos, path=path)
        values.append(int(m.group()))
        pos = m.end()
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise DecodeError("malformed PPM header: missing whitespace after maxval", offset=pos, path=path)
    pos += 1
    w, h, maxval = values
    if w < 1 or h < 1:
        raise DecodeError(f"invalid PPM dimensions {w}x{h}", offset=pos, path=path)
    if maxval != 255:
        raise DecodeError(f"unsupported PPM maxval {maxval} (only 255)", offset=pos, path=path)
    need = w * h * 3
    have = len(data) - pos
    if have < need:
        raise DecodeError(f"truncated PPM payload: expected {need} bytes, found {have}", offset=len(data), path=path)
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3).copy()


def write_ppm(path: str | Path, pixels: np.ndarray) -> None:
    """Write atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    payload = encode_ppm(pixels)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise ImageIOError(f"cannot write image {path}: {e}") from e


def read_image(path: str | Path) -> np.ndarray:
    """Decode ``path`` to an (H, W, 3) uint8 array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ImageIOError(f"cannot read image {path}: {e}") from e
    if data[:2] == b"P6":
        return decode_ppm(data, path=path)
    try:
        from PIL import Image
    except ImportError:
        raise DecodeError("unsupported image format (install Pillow for PNG/JPEG)", path=path) from None
    try:
        import io

        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except Exception as e:
        raise DecodeError(f"cannot decode image: {e}", path=path) from e


def image_size(path: str | Path) -> tuple[int, int]:
    h, w = read_image(path).shape[:2]
    return w, h


# ---------------------------------------------------------------------------
# pixel transforms


def normalize(pixels: np.ndarray) -> np.ndarray:
    """[0, 255] -> [-1, 1] via p / 127.5 - 1."""
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def denormalize(x: np.ndarray) -> np.ndarray:
    """[-1, 1] -> uint8 via round-half-up of (x + 1) * 127.5, clamped to [0, 255]."""
    v = np.floor((np.asarray(x, dtype=np.float64) + 1.0) * 127.5 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def center_crop_square(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    s = min(h, w)
    top = (h - s) // 2
    left = (w - s) // 2
    return img[top : top + s, left : left + s]


def _axis_weights(src: int, dst: int):
    # half-pixel centres, clamped at the borders
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Bilinear resize of an (H, W, C) array with half-pixel sample centres."""
    width = height if width is None else width
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    y0, y1, fy = _axis_weights(h, height)
    x0, x1, fx = _axis_weights(w, width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def prepare_image(pixels: np.ndarray, resolution: int) -> np.ndarray:
    """Center-crop, resize to ``resolution`` and normalize; returns (3, R, R)."""
    sq = center_crop_square(pixels)
    if sq.shape[0] != resolution:
        sq = resize_bilinear(sq, resolution)
    return normalize(sq).transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# manifest and batches


@dataclass
class ManifestEntry:
    path: str
    width: int
    height: int
    upscaled: bool


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    target_resolution: int
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def undersized_fraction(self) -> float:
        return sum(e.upscaled for e in self.entries) / len(self.entries) if self.entries else 0.0

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(MANIFEST_HEADER)
            for e in self.entries:
                w.writerow([e.path, e.width, e.height, int(e.upscaled)])

    @classmethod
    def from_csv(cls, path: str | Path, target_resolution: int) -> "DatasetManifest":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        entries = [ManifestEntry(r["path"], int(r["width"]), int(r["height"]), r["upscaled"] in ("1", "True", "true")) for r in rows]
        return cls(entries, target_resolution)


def ingest(dir_path: str | Path, target_resolution: int) -> DatasetManifest:
    """Scan a directory for images and flag the ones smaller than the target.

    Undecodable files go to ``manifest.skipped``; an empty result is fatal.
    """
    d = Path(dir_path)
    if not d.is_dir():
        raise ConfigError(f"dataset directory {d} does not exist")
    entries, skipped = [], []
    for p in sorted(d.iterdir()):
        if not p.is_file() or p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            w, h = image_size(p)
        except ImageIOError as e:
            skipped.append((str(p), str(e)))
            continue
        entries.append(ManifestEntry(str(p), w, h, max(w, h) < target_resolution))
    if not entries:
        raise ConfigError(f"no decodable images in {d}")
    return DatasetManifest(entries, int(target_resolution), skipped)


@dataclass
class ImageBatch:
    images: np.ndarray
    indices: np.ndarray
    upscaled: np.ndarray


def load_batch(manifest: DatasetManifest, indices: Sequence[int], target_resolution: int) -> ImageBatch:
    idx = np.asarray(indices, dtype=int)
    n = len(manifest.entries)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ConfigError(f"batch indices out of range for a dataset of {n} images")
    out = np.empty((len(idx), 3, target_resolution, target_resolution))
    for row, i in enumerate(idx):
        out[row] = prepare_image(read_image(manifest.entries[i].path), target_resolution)
    ups = np.array([manifest.entries[i].upscaled for i in idx], dtype=bool)
    return ImageBatch(out, idx, ups)


class ImageDataset:
    """Manifest-backed dataset; decoded images are cached after first use."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self.resolution = manifest.target_resolution
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.manifest)

    def images(self, indices) -> np.ndarray:
        missing = [int(i) for i in indices if int(i) not in self._cache]
        if missing:
            batch = load_batch(self.manifest, missing, self.resolution)
            self._cache.update(zip(missing, batch.images))
        return np.stack([self._cache[int(i)] for i in indices])


class ArrayDataset:
    def __init__(self, images: np.ndarray):
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != images.shape[3]:
            raise ConfigError(f"expected (N, 3, R, R) images, got {images.shape}")
        self.data = images
        self.resolution = images.shape[2]

    def __len__(self):
        return len(self.data)

    def images(self, indices) -> np.ndarray:
        return self.data[np.asarray(indices, dtype=int)]


def synthetic_images(n: int, resolution: int, seed: int = 0) -> np.ndarray:
    """Smooth colored blobs on a gradient background, (n, H, W, 3) uint8."""
    rng = make_rng(seed, 7)
    yy, xx = np.mgrid[0:resolution, 0:resolution] / max(resolution - 1, 1)
    out = np.empty((n, resolution, resolution, 3), dtype=np.uint8)
    for i in range(n):
        cy, cx = rng.uniform(0.25, 0.75, 2)
        radius = rng.uniform(0.15, 0.35)
        color = rng.uniform(0, 1, 3)
        bg = rng.uniform(0, 0.4, 3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))[..., None]
        img = bg * (1 - yy[..., None]) + blob * color
        out[i] = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    return out


def write_synthetic_dataset(dir_path: str | Path, n: int, resolution: int, seed: int = 0) -> list[Path]:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(synthetic_images(n, resolution, seed)):
        p = d / f"img_{i:05d}.ppm"
        write_ppm(p, img)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# batch-size schedule and epoch iteration


@dataclass(frozen=True)
class BatchSchedule:
    """Anchor ``(resolution, batch_size)`` points with log-log interpolation between them."""

    anchors: tuple[tuple[int, int], ...] = ((192, 128), (1024, 6))

    def __post_init__(self):
        a = sorted(self.anchors)
        if not a:
            raise ConfigError("batch schedule needs at least one anchor")
        for (r0, b0), (r1, b1) in zip(a, a[1:]):
            if r0 == r1 or b1 > b0:
                raise ConfigError(f"batch schedule anchors must have distinct resolutions and non-increasing sizes: {a}")
        if any(b < 1 or r < 1 for r, b in a):
            raise ConfigError(f"batch schedule anchors must be positive: {a}")
        object.__setattr__(self, "anchors", tuple(a))


DEFAULT_SCHEDULE = BatchSchedule()


def batch_size_for(resolution: int, schedule: BatchSchedule = DEFAULT_SCHEDULE, override: int | None = None) -> int:
    """Batch size for ``resolution``; an explicit override always wins.

    Between anchors ``(r0, b0)`` and ``(r1, b1)`` the size is
    ``floor(b0 * (r / r0) ** (ln(b1 / b0) / ln(r1 / r0)))``, at least 1.
    """
    if override is not None:
        if override < 1:
            raise ConfigError(f"batch override must be >= 1, got {override}")
        return int(override)
    anchors = schedule.anchors
    for r, b in anchors:
        if resolution == r:
            return b
    lo, hi = anchors[0][0], anchors[-1][0]
    if not lo <= resolution <= hi:
        raise ConfigError(f"resolution {resolution} is outside the batch schedule range [{lo}, {hi}]; set a batch override")
    for (r0, b0), (r1, b1) in zip(anchors, anchors[1:]):
        if r0 < resolution < r1:
            p = math.log(b1 / b0) / math.log(r1 / r0)
            return max(1, math.floor(b0 * (resolution / r0) ** p))
    raise AssertionError("unreachable")


def epoch_iterator(n_or_manifest, batch_size: int, seed: int, epoch: int = 0) -> list[np.ndarray]:
    """Seeded shuffle of ``range(N)`` cut into ``ceil(N / batch_size)`` batches.

    The permutation depends only on ``(seed, epoch)``.
    """
    n = n_or_manifest if isinstance(n_or_manifest, int) else len(n_or_manifest)
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    perm = make_rng(seed, 3, epoch).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def iterate_epochs(n_or_manifest, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    epoch = 0
    while True:
        yield from epoch_iterator(n_or_manifest, batch_size, seed, epoch)
        epoch += 1
