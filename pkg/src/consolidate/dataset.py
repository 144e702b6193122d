"""MNIST acquisition, task variants (permuted / rotated / mixed), batching.

The on-disk format is the classic IDX container (big-endian headers, raw
unsigned bytes). Files may sit in the cache directory either raw or
gzip-compressed; the loader handles both. Task transforms never touch
labels: a task is a fixed label-preserving rewrite of the 784 pixels.
"""

from __future__ import annotations

import gzip
import hashlib
import logging
import math
import os
import struct
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .core_math import Matrix, derive_rng, random_permutation
from .errors import DomainError, IntegrityError, ParseError, TransportError

log = logging.getLogger(__name__)

IMAGE_SIDE = 28
PIXELS = IMAGE_SIDE * IMAGE_SIDE
# Rotation center in pixel coordinates (both axes), midway in a 28px grid.
ROTATION_CENTER = (IMAGE_SIDE - 1) / 2.0

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

DEFAULT_BASE_URL = "https://storage.googleapis.com/cvdf-datasets/mnist/"
DATA_DIR_ENV = "CONSOLIDATE_DATA_DIR"

# SHA-256 digests of the canonical gzip-compressed MNIST files.
MNIST_FILES = {
    "train-images-idx3-ubyte.gz":
        "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609",
    "train-labels-idx1-ubyte.gz":
        "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c",
    "t10k-images-idx3-ubyte.gz":
        "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6",
    "t10k-labels-idx1-ubyte.gz":
        "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6",
}


@dataclass(frozen=True)
class LabeledDataset:
    """Pixel rows in [0,1] paired with integer class labels."""

    images: Matrix          # (n, 784) float64
    labels: np.ndarray      # (n,) int64 in 0..9

    def __post_init__(self):
        if self.images.ndim != 2:
            raise DomainError(f"images must be 2-D, got ndim={self.images.ndim}")
        if self.labels.ndim != 1 or len(self.labels) != self.images.shape[0]:
            raise DomainError(
                f"label count {self.labels.shape} does not match "
                f"{self.images.shape[0]} images")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.images[indices], self.labels[indices])


@dataclass(frozen=True)
class TaskSpec:
    """A label-preserving input transform defining one task.

    kind is one of "identity", "permutation", "rotation". Permutation
    tasks carry a bijection on the 784 pixel indices; rotation tasks an
    angle in degrees within [-180, 180].
    """

    kind: str
    task_id: int
    permutation: np.ndarray | None = None
    angle_degrees: float | None = None

    def validate(self) -> None:
        if self.kind == "identity":
            return
        if self.kind == "permutation":
            p = self.permutation
            if p is None or len(p) != PIXELS or \
                    not np.array_equal(np.sort(p), np.arange(PIXELS)):
                raise DomainError(
                    f"task {self.task_id}: permutation must be a bijection "
                    f"on 0..{PIXELS - 1}")
            return
        if self.kind == "rotation":
            a = self.angle_degrees
            if a is None or not -180.0 <= a <= 180.0:
                raise DomainError(
                    f"task {self.task_id}: rotation angle must lie in "
                    f"[-180, 180], got {a}")
            return
        raise DomainError(f"unknown task kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "identity":
            return "identity"
        if self.kind == "permutation":
            return "permutation"
        return f"rotation {self.angle_degrees:g} deg"


@dataclass(frozen=True)
class DataSplit:
    """Disjoint train/validation partition plus the held-out test file."""

    train: LabeledDataset
    validation: LabeledDataset
    test: LabeledDataset | None = None


def default_data_dir() -> Path:
    """Cache directory: $CONSOLIDATE_DATA_DIR, else ./data."""
    return Path(os.environ.get(DATA_DIR_ENV, "./data"))


# ----------------------------------------------------------------------
# IDX parsing
# ----------------------------------------------------------------------

def parse_idx(image_bytes: bytes, label_bytes: bytes) -> LabeledDataset:
    """Decode an IDX image file + IDX label file pair.

    Headers are big-endian. Image file: magic 0x00000803, then counts
    (n, rows, cols) as 32-bit integers, then n*rows*cols unsigned bytes.
    Label file: magic 0x00000801, count n, then n unsigned bytes.
    Pixels are normalized to [0, 1].
    """
    if len(image_bytes) < 16:
        raise ParseError("image file truncated: header incomplete")
    magic, n_img, rows, cols = struct.unpack(">IIII", image_bytes[:16])
    if magic != IMAGE_MAGIC:
        raise ParseError(
            f"image magic: expected {IMAGE_MAGIC:#010x}, got {magic:#010x}")
    expected = 16 + n_img * rows * cols
    if len(image_bytes) != expected:
        raise ParseError(
            f"image payload: expected {expected} bytes for {n_img} images "
            f"of {rows}x{cols}, got {len(image_bytes)}")

    if len(label_bytes) < 8:
        raise ParseError("label file truncated: header incomplete")
    lmagic, n_lbl = struct.unpack(">II", label_bytes[:8])
    if lmagic != LABEL_MAGIC:
        raise ParseError(
            f"label magic: expected {LABEL_MAGIC:#010x}, got {lmagic:#010x}")
    if len(label_bytes) != 8 + n_lbl:
        raise ParseError(
            f"label payload: expected {8 + n_lbl} bytes, got {len(label_bytes)}")
    if n_img != n_lbl:
        raise ParseError(
            f"count mismatch: {n_img} images vs {n_lbl} labels")

    pixels = np.frombuffer(image_bytes, dtype=np.uint8, offset=16)
    images = pixels.astype(np.float64).reshape(n_img, rows * cols) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise ParseError(f"label values: max {labels.max()} exceeds 9")
    return LabeledDataset(images, labels)


def write_idx(images_u8: np.ndarray, labels: np.ndarray,
              image_path: Path, label_path: Path) -> None:
    """Serialize uint8 images (n, rows, cols) and labels to IDX files."""
    n, rows, cols = images_u8.shape
    with open(image_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images_u8.astype(np.uint8).tobytes())
    with open(label_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, n))
        f.write(np.asarray(labels).astype(np.uint8).tobytes())


# ----------------------------------------------------------------------
# Acquisition
# ----------------------------------------------------------------------

def _http_get(url: str, timeout: float = 60.0) -> bytes:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise TransportError(f"download failed for {url}: {exc}") from exc


def fetch_mnist(base_url: str = DEFAULT_BASE_URL,
                cache_dir: Path | None = None,
                http_get: Callable[[str], bytes] | None = None) -> dict[str, Path]:
    """Ensure the four MNIST files are cached with verified SHA-256 digests.

    Valid cached files are never re-downloaded; a corrupted cached file is
    deleted and fetched again. A fresh download that still fails
    verification raises IntegrityError; network failures raise
    TransportError carrying the URL.
    """
    if http_get is None:
        http_get = _http_get
    cache = Path(cache_dir) if cache_dir is not None else default_data_dir()
    cache.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for name, digest in MNIST_FILES.items():
        path = cache / name
        if path.exists():
            if _sha256(path) == digest:
                log.info("cache valid: %s", path)
                paths[name] = path
                continue
            log.warning("integrity error: %s does not match its checksum, "
                        "re-downloading", path)
            path.unlink()
        url = base_url.rstrip("/") + "/" + name
        blob = http_get(url)
        tmp = path.with_suffix(path.suffix + ".part")
        tmp.write_bytes(blob)
        if hashlib.sha256(blob).hexdigest() != digest:
            tmp.unlink()
            raise IntegrityError(
                f"checksum mismatch for {name} downloaded from {url}")
        tmp.replace(path)
        log.info("downloaded %s (%d bytes)", path, len(blob))
        paths[name] = path
    return paths


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_maybe_gzip(cache: Path, logical_name: str) -> bytes:
    """Read `name` or `name.gz` from the cache, decompressing as needed."""
    raw = cache / logical_name
    if raw.exists():
        return raw.read_bytes()
    gz = cache / (logical_name + ".gz")
    if gz.exists():
        with gzip.open(gz, "rb") as f:
            return f.read()
    raise ParseError(f"missing data file {raw} (or {gz.name}); "
                     f"run `consolidate fetch` first")


def load_mnist(cache_dir: Path | None = None) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the cached train and test sets."""
    cache = Path(cache_dir) if cache_dir is not None else default_data_dir()
    train = parse_idx(_read_maybe_gzip(cache, "train-images-idx3-ubyte"),
                      _read_maybe_gzip(cache, "train-labels-idx1-ubyte"))
    test = parse_idx(_read_maybe_gzip(cache, "t10k-images-idx3-ubyte"),
                     _read_maybe_gzip(cache, "t10k-labels-idx1-ubyte"))
    return train, test


# ----------------------------------------------------------------------
# Task transforms
# ----------------------------------------------------------------------

def rotate_images(images: Matrix, angle_degrees: float) -> Matrix:
    """Rotate flattened 28x28 images about the grid center.

    Inverse mapping with bilinear interpolation: each destination pixel
    pulls from the source location obtained by rotating its centered
    coordinates by -angle; points outside the grid contribute zero.
    Positive angles rotate the digit counterclockwise as displayed.
    """
    theta = math.radians(angle_degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    c = ROTATION_CENTER

    rr, cc = np.meshgrid(np.arange(IMAGE_SIDE), np.arange(IMAGE_SIDE),
                         indexing="ij")
    u = cc.ravel() - c    # column offset of each destination pixel
    v = rr.ravel() - c    # row offset
    src_col = cos_t * u - sin_t * v + c
    src_row = sin_t * u + cos_t * v + c

    c0 = np.floor(src_col).astype(np.int64)
    r0 = np.floor(src_row).astype(np.int64)
    fc = src_col - c0
    fr = src_row - r0

    out = np.zeros((images.shape[0], PIXELS), dtype=np.float64)
    pix = images.reshape(images.shape[0], IMAGE_SIDE, IMAGE_SIDE)
    for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                      (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        r = r0 + dr
        col = c0 + dc
        ok = (r >= 0) & (r < IMAGE_SIDE) & (col >= 0) & (col < IMAGE_SIDE)
        if not ok.any():
            continue
        vals = pix[:, r[ok], col[ok]]
        out[:, ok] += w[ok] * vals
    return out


def apply_task(data: LabeledDataset, task: TaskSpec) -> LabeledDataset:
    """Transform every image per the task; labels pass through untouched."""
    task.validate()
    if task.kind == "identity":
        return LabeledDataset(data.images.copy(), data.labels.copy())
    if task.kind == "permutation":
        return LabeledDataset(data.images[:, task.permutation], data.labels.copy())
    return LabeledDataset(rotate_images(data.images, task.angle_degrees),
                          data.labels.copy())


def make_permuted_sequence(n_tasks: int, master_seed: int) -> list[TaskSpec]:
    """Task 0 is plain MNIST; tasks 1..n-1 get distinct seeded pixel shuffles."""
    if n_tasks < 1:
        raise DomainError(f"n_tasks must be >= 1, got {n_tasks}")
    tasks = [TaskSpec(kind="identity", task_id=0)]
    for t in range(1, n_tasks):
        perm = random_permutation(PIXELS, derive_rng(master_seed, "permute", t))
        tasks.append(TaskSpec(kind="permutation", task_id=t, permutation=perm))
    return tasks


def make_rotated_sequence(angles: list[float]) -> list[TaskSpec]:
    """One rotation task per angle, in the order given."""
    tasks = []
    for t, angle in enumerate(angles):
        spec = TaskSpec(kind="rotation", task_id=t, angle_degrees=float(angle))
        spec.validate()
        tasks.append(spec)
    return tasks


def make_mixed_sequence(master_seed: int = 0) -> list[TaskSpec]:
    """The heterogeneous benchmark: rotation 0, a pixel shuffle, rotation 90."""
    perm = random_permutation(PIXELS, derive_rng(master_seed, "permute", 1))
    return [
        TaskSpec(kind="rotation", task_id=0, angle_degrees=0.0),
        TaskSpec(kind="permutation", task_id=1, permutation=perm),
        TaskSpec(kind="rotation", task_id=2, angle_degrees=90.0),
    ]


# ----------------------------------------------------------------------
# Splitting and batching
# ----------------------------------------------------------------------

def split_train_validation(data: LabeledDataset, validation_fraction: float,
                           rng: np.random.Generator,
                           test: LabeledDataset | None = None) -> DataSplit:
    """Seeded random partition into train/validation halves."""
    if not 0.0 < validation_fraction < 1.0:
        raise DomainError(
            f"validation fraction must lie in (0, 1), got {validation_fraction}")
    n = data.n
    n_val = int(round(n * validation_fraction))
    order = rng.permutation(n)
    return DataSplit(train=data.subset(order[n_val:]),
                     validation=data.subset(order[:n_val]),
                     test=test)


def batches(data: LabeledDataset, batch_size: int,
            rng: np.random.Generator) -> Iterator[tuple[Matrix, np.ndarray]]:
    """Freshly shuffled mini-batches covering every example exactly once."""
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(data.n)

    def gen():
        for start in range(0, data.n, batch_size):
            idx = order[start:start + batch_size]
            yield data.images[idx], data.labels[idx]

    return gen()
