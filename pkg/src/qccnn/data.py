"""Dataset ingestion, normalization, patch extraction and synthetic data.

Supported input formats:

* ZIP archive of binary array records (``.npz``): keys ``train_images``,
  ``train_labels``, ``val_images``, ``val_labels``; images are uint8
  ``(N, H, W)``, labels uint8 binary.
* IDX pairs: images with big-endian magic ``0x00000803``, labels with
  ``0x00000801``.
* CSV with header ``label,p0,...,p{H*W-1}`` for a square image.

Pixels p in [0, 255] map to 2*(p/255) - 1 in [-1, 1]; the mapping round
trips exactly on integers.
"""

from __future__ import annotations

import csv
import struct
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(Exception):
    """Raised when a dataset file is missing, malformed or inconsistent."""


@dataclass
class Dataset:
    """Normalized images in [-1, 1] with binary labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise DataError(f"images must be (N, H, W), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]


@dataclass
class SyntheticSpec:
    """Recipe for the desk-scale two-blob dataset."""

    seed: int = 0
    train_n: int = 200
    val_n: int = 50
    size: int = 8
    noise: float = 0.1


def normalize_pixels(pixels) -> np.ndarray:
    """uint8 pixel values to floats in [-1, 1]."""
    return 2.0 * (np.asarray(pixels, dtype=float) / 255.0) - 1.0


def denormalize_pixels(values) -> np.ndarray:
    """Inverse of :func:`normalize_pixels`, exact on integer pixels."""
    return np.rint((np.asarray(values, dtype=float) + 1.0) * 255.0 / 2.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

_ARCHIVE_KEYS = ("train_images", "train_labels", "val_images", "val_labels")


def _read_archive_member(zf: zipfile.ZipFile, key: str) -> np.ndarray:
    names = set(zf.namelist())
    member = key + ".npy" if key + ".npy" in names else key
    if member not in names:
        raise DataError(f"archive is missing record {key!r}")
    with zf.open(member) as f:
        if f.read(6) != b"\x93NUMPY":
            raise DataError(f"record {key!r}: bad magic bytes, not an array record")
    with zf.open(member) as f:
        try:
            return np.lib.format.read_array(f, allow_pickle=False)
        except Exception as exc:
            raise DataError(f"record {key!r}: {exc}") from exc


def _validate_images(arr: np.ndarray, key: str) -> np.ndarray:
    if arr.ndim == 4 and arr.shape[3] == 1:
        arr = arr[..., 0]
    if arr.ndim != 3:
        raise DataError(
            f"record {key!r}: expected grayscale (N, H, W) images, got shape {arr.shape}"
        )
    if arr.dtype != np.uint8:
        raise DataError(f"record {key!r}: expected uint8 pixels, got {arr.dtype}")
    return arr


def _validate_labels(arr: np.ndarray, key: str, n_images: int) -> np.ndarray:
    arr = np.asarray(arr).reshape(-1)
    if arr.shape[0] != n_images:
        raise DataError(f"record {key!r}: {arr.shape[0]} labels for {n_images} images")
    if not np.issubdtype(arr.dtype, np.integer):
        raise DataError(f"record {key!r}: labels must be integers, got {arr.dtype}")
    if not np.isin(arr, (0, 1)).all():
        raise DataError(f"record {key!r}: non-binary labels present")
    return arr.astype(np.int64)


def load_array_archive(path) -> tuple[Dataset, Dataset]:
    """Load train/val splits from a ZIP-of-array-records archive."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such archive: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise DataError(f"{path} is not a ZIP archive: {exc}") from exc
    with zf:
        records = {key: _read_archive_member(zf, key) for key in _ARCHIVE_KEYS}
    datasets = []
    for split in ("train", "val"):
        images = _validate_images(records[f"{split}_images"], f"{split}_images")
        labels = _validate_labels(records[f"{split}_labels"], f"{split}_labels", len(images))
        datasets.append(Dataset(normalize_pixels(images), labels, split))
    return datasets[0], datasets[1]


_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path: Path, magic: int, n_dims: int) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    header = 4 + 4 * n_dims
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise DataError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{n_dims}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) != header + count:
        raise DataError(f"{path}: payload size {len(raw) - header}, expected {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx_pair(images_path, labels_path, split: str = "train") -> Dataset:
    """Load one split from an IDX image/label file pair."""
    images = _read_idx(Path(images_path), _IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(Path(labels_path), _IDX_LABELS_MAGIC, 1)
    labels = _validate_labels(labels, str(labels_path), len(images))
    return Dataset(normalize_pixels(images), labels, split)


def load_csv(path, split: str = "train") -> Dataset:
    """Load one split from a CSV of rows ``label,p0,...,p{H*W-1}``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        n_pixels = len(header) - 1
        side = int(round(n_pixels**0.5))
        if header[0] != "label" or side * side != n_pixels:
            raise DataError(f"{path}: header must be label,p0,...,p(k*k-1)")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    try:
        table = np.array(rows, dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell: {exc}") from exc
    if np.any(table < 0) or np.any(table[:, 1:] > 255):
        raise DataError(f"{path}: pixel values outside 0..255")
    labels = _validate_labels(table[:, 0], str(path), len(table))
    images = table[:, 1:].reshape(-1, side, side).astype(np.uint8)
    return Dataset(normalize_pixels(images), labels, split)


def load_dataset(source) -> tuple[Dataset, Dataset]:
    """Resolve a data source string to (train, val) datasets.

    Accepts ``synthetic`` (optionally ``synthetic:seed=N``), a ``.npz``/
    ``.zip`` archive path, or a directory holding either ``train.csv`` +
    ``val.csv`` or IDX files named ``{split}-images.idx`` /
    ``{split}-labels.idx``.
    """
    source = str(source)
    if source == "synthetic" or source.startswith("synthetic:"):
        spec = SyntheticSpec()
        if ":" in source:
            for item in source.split(":", 1)[1].split(","):
                key, _, value = item.partition("=")
                if key not in ("seed", "train_n", "val_n", "size"):
                    raise DataError(f"unknown synthetic option {key!r}")
                setattr(spec, key, int(value))
        return generate_synthetic(spec)
    path = Path(source)
    if path.suffix in (".npz", ".zip"):
        return load_array_archive(path)
    if path.is_dir():
        if (path / "train.csv").is_file():
            return load_csv(path / "train.csv", "train"), load_csv(path / "val.csv", "val")
        if (path / "train-images.idx").is_file():
            return (
                load_idx_pair(path / "train-images.idx", path / "train-labels.idx", "train"),
                load_idx_pair(path / "val-images.idx", path / "val-labels.idx", "val"),
            )
        raise DataError(f"{path}: no recognized dataset files in directory")
    raise DataError(f"unrecognized data source {source!r}")


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Two-class blob images: class 0 lights up the top-left corner, class 1
    the bottom-right.  Deterministic for a fixed spec."""
    rng = np.random.default_rng(spec.seed)
    size = spec.size
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    centers = {0: (size // 4, size // 4), 1: (3 * size // 4, 3 * size // 4)}

    def make(split: str, n: int) -> Dataset:
        labels = (np.arange(n) % 2).astype(np.int64)
        images = np.empty((n, size, size))
        for i, label in enumerate(labels):
            cr, ccol = centers[int(label)]
            blob = np.exp(-((rr - cr) ** 2 + (cc - ccol) ** 2) / (2.0 * 1.2**2))
            img = -0.85 + 1.7 * blob
            if spec.noise:
                img = img + rng.uniform(-spec.noise, spec.noise, (size, size))
            images[i] = np.clip(img, -1.0, 1.0)
        return Dataset(images, labels, split)

    return make("train", spec.train_n), make("val", spec.val_n)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------


def patch_grid(height: int, width: int, size: int = 2, stride: int = 2) -> tuple[int, int]:
    """Feature-map shape for valid windows of `size` at `stride`."""
    if height < size or width < size:
        raise ValueError(f"image {height}x{width} smaller than {size}x{size} window")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return (height - size) // stride + 1, (width - size) // stride + 1


def extract_patches(image, size: int = 2, stride: int = 2) -> np.ndarray:
    """All valid windows in row-major order, each flattened row-major.

    Returns an array of shape (n_patches, size*size).
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    h_out, w_out = patch_grid(image.shape[0], image.shape[1], size, stride)
    windows = np.lib.stride_tricks.sliding_window_view(image, (size, size))
    windows = windows[::stride, ::stride]
    return windows.reshape(h_out * w_out, size * size).copy()
