"""MNIST IDX ingestion and the 784 -> 32 pixel reduction.

The reduction: crop the 2-pixel border of the 28x28 grid to 24x24, average
each non-overlapping 4x4 block to get 6x6, then drop the four corners of
the 6x6 grid, leaving 32 values in row-major order.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from dbnsat.rbm import ShapeError

IDX_UNSIGNED_BYTE = 0x08

# Row-major 6x6 indices that survive the corner drop.
REDUCED_KEPT_INDICES = tuple(i for i in range(36) if i not in (0, 5, 30, 35))


class IdxFormatError(ValueError):
    """Bad magic number or unparseable IDX header."""


class IdxTruncationError(ValueError):
    """Payload shorter or longer than the header declares."""


class IdxUnsupportedError(ValueError):
    """Element type this reader does not handle."""


@dataclass
class IdxArray:
    element_type: int
    dims: tuple
    payload: np.ndarray  # flat, row-major


@dataclass
class LabeledImages:
    images: np.ndarray  # (count, pixels), values in [0, 1]
    labels: np.ndarray  # (count,), ints 0-9
    width: int
    height: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")

    def __len__(self):
        return len(self.images)


@dataclass
class PartitionSpec:
    num_parts: int = 10
    part_size: int = 0
    seed: int = 0


def parse_idx(data: bytes) -> IdxArray:
    """Parse IDX bytes: zero-padded magic, big-endian dims, raw payload."""
    if len(data) < 4:
        raise IdxFormatError("input shorter than the 4-byte magic")
    zero, zero2, element_type, rank = struct.unpack(">BBBB", data[:4])
    if zero != 0 or zero2 != 0:
        raise IdxFormatError(f"bad magic {data[:4].hex()}")
    if element_type != IDX_UNSIGNED_BYTE:
        raise IdxUnsupportedError(f"unsupported element type 0x{element_type:02x}")
    header_len = 4 + 4 * rank
    if len(data) < header_len:
        raise IdxTruncationError("header truncated before dimension sizes")
    dims = struct.unpack(f">{rank}I", data[4:header_len])
    expected = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = data[header_len:]
    if len(payload) != expected:
        raise IdxTruncationError(
            f"payload has {len(payload)} bytes, header declares {expected}"
        )
    return IdxArray(element_type, dims, np.frombuffer(payload, dtype=np.uint8))


def _read_maybe_gz(path) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_mnist(images_path, labels_path) -> LabeledImages:
    """Read an MNIST image/label IDX file pair (optionally gzipped)."""
    images = parse_idx(_read_maybe_gz(images_path))
    labels = parse_idx(_read_maybe_gz(labels_path))
    if len(images.dims) != 3:
        raise IdxFormatError("image file must be rank 3")
    if len(labels.dims) != 1:
        raise IdxFormatError("label file must be rank 1")
    count, height, width = images.dims
    if labels.dims[0] != count:
        raise ValueError("image and label counts differ")
    pixels = images.payload.reshape(count, height * width).astype(np.float64) / 255.0
    return LabeledImages(pixels, labels.payload.astype(np.int64), width, height)


def reduce_image(pixels) -> np.ndarray:
    """Map one 784-pixel image to the 32-value reduced representation."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape != (784,):
        raise ShapeError(f"expected 784 pixels, got {pixels.shape}")
    grid = pixels.reshape(28, 28)[2:26, 2:26]
    blocks = grid.reshape(6, 4, 6, 4).mean(axis=(1, 3)).reshape(36)
    return blocks[list(REDUCED_KEPT_INDICES)]


def reduce_images(batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    return np.stack([reduce_image(row) for row in batch])


def partition(data: LabeledImages, spec: PartitionSpec):
    """Seeded shuffle, then num_parts disjoint slices of part_size each."""
    total = spec.num_parts * spec.part_size
    if spec.num_parts < 1 or spec.part_size < 1 or total > len(data):
        raise ValueError(
            f"cannot cut {spec.num_parts} x {spec.part_size} from {len(data)} samples"
        )
    order = np.random.default_rng(spec.seed).permutation(len(data))
    parts = []
    for p in range(spec.num_parts):
        idx = order[p * spec.part_size : (p + 1) * spec.part_size]
        parts.append(
            LabeledImages(data.images[idx], data.labels[idx], data.width, data.height)
        )
    return parts


def write_idx_images(path, images_u8: np.ndarray):
    """Write a rank-3 u8 IDX image file (inverse of the image side of load_mnist)."""
    count, height, width = images_u8.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, IDX_UNSIGNED_BYTE, 3))
        fh.write(struct.pack(">III", count, height, width))
        fh.write(np.ascontiguousarray(images_u8, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, IDX_UNSIGNED_BYTE, 1))
        fh.write(struct.pack(">I", len(labels)))
        fh.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
