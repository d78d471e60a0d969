"""MNIST ingestion in IDX format, normalization, and deterministic subsets.

IDX headers are big-endian; images carry magic 0x00000803 and labels
0x00000801. Pixels are divided by exactly 255.0 so values land in [0, 1] with
saturated pixels mapping to 1.0. Gzip inputs are detected by sniffing the
1f 8b magic, so .gz and raw files both load.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bounds import DatasetStats
from .tensor import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
NUM_CLASSES = 10

TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


class IdxFormatError(ValueError):
    """Malformed IDX file; the message carries the failing byte offset."""


@dataclass
class Dataset:
    xs: np.ndarray  # n x d, float64 in [0, 1]
    ys: np.ndarray  # n, int labels < NUM_CLASSES
    stats: DatasetStats

    @property
    def n(self) -> int:
        return self.xs.shape[0]


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _parse_images(raw: bytes, path) -> np.ndarray:
    if len(raw) < 16:
        raise IdxFormatError(f"{path}: truncated header at byte {len(raw)}")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{path}: bad image magic 0x{magic:08x} at byte 0")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise IdxFormatError(
            f"{path}: expected {expected} bytes, file ends at byte {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def _parse_labels(raw: bytes, path) -> np.ndarray:
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header at byte {len(raw)}")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{path}: bad label magic 0x{magic:08x} at byte 0")
    if len(raw) != 8 + count:
        raise IdxFormatError(
            f"{path}: expected {8 + count} bytes, file ends at byte {len(raw)}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an images/labels IDX pair (optionally gzipped) into a Dataset."""
    xs = _parse_images(_read_bytes(images_path), images_path)
    ys = _parse_labels(_read_bytes(labels_path), labels_path)
    if xs.shape[0] != ys.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {xs.shape[0]} images vs {ys.shape[0]} labels"
        )
    ds = Dataset(xs=xs, ys=ys, stats=None)
    ds.stats = compute_stats(ds)
    return ds


def write_idx(ds: Dataset, images_path, labels_path, rows: int = 28, cols: int = 28) -> None:
    """Write a Dataset back to raw IDX files; reloading reproduces the floats."""
    n = ds.n
    if rows * cols != ds.xs.shape[1]:
        raise ValueError(f"rows*cols must equal d={ds.xs.shape[1]}")
    pixels = np.rint(ds.xs * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(ds.ys.astype(np.uint8).tobytes())


def subsample(ds: Dataset, n_keep: int, rng: Rng) -> Dataset:
    """Uniform sample without replacement via a Fisher-Yates prefix."""
    n = ds.n
    if n_keep > n:
        raise ValueError(f"n_keep={n_keep} exceeds dataset size {n}")
    idx = np.arange(n)
    for i in range(n_keep):
        j = i + int(rng.integers(n - i))
        idx[i], idx[j] = idx[j], idx[i]
    chosen = idx[:n_keep]
    sub = Dataset(xs=ds.xs[chosen].copy(), ys=ds.ys[chosen].copy(), stats=None)
    sub.stats = compute_stats(sub)
    return sub


def compute_stats(ds: Dataset, k: int = NUM_CLASSES) -> DatasetStats:
    xs = ds.xs
    if xs.shape[0] < 1:
        raise ValueError("compute_stats needs at least one sample")
    sq = (xs * xs).sum(axis=1)
    return DatasetStats(
        n=xs.shape[0],
        mean_x_l2=float(np.sqrt(sq).mean()),
        mean_x_l2_sq=float(sq.mean()),
        r_x=float(np.abs(xs).max()),
        d=xs.shape[1],
        k=k,
    )


def _find_pair(data_dir: Path, names: tuple[str, str]) -> tuple[Path, Path]:
    paths = []
    for name in names:
        raw = data_dir / name
        gz = data_dir / (name + ".gz")
        if raw.exists():
            paths.append(raw)
        elif gz.exists():
            paths.append(gz)
        else:
            raise FileNotFoundError(f"missing data file {raw} (or {gz})")
    return paths[0], paths[1]


def load_mnist(data_dir) -> tuple[Dataset, Dataset]:
    """Load the train and test splits from a directory of IDX(.gz) files."""
    data_dir = Path(data_dir)
    train = load_idx(*_find_pair(data_dir, TRAIN_FILES))
    test = load_idx(*_find_pair(data_dir, TEST_FILES))
    return train, test
