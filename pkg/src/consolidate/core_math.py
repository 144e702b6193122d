"""Dense float64 matrix arithmetic and seeded randomness.

Everything numeric in this package is a row-major 2-D ``numpy.ndarray`` of
float64 (one row per example for batch data). Randomness always flows
through a PCG64 generator so that every experiment is reproducible from a
single integer seed.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import DomainError, ShapeError

# The single PRNG algorithm used throughout: numpy's PCG64. Identical
# seeds give identical streams on every platform.
Matrix = np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Create the package-wide deterministic generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive_rng(master_seed: int, *tokens: int | str) -> np.random.Generator:
    """Derive an independent generator from a master seed and a label path.

    String tokens are hashed with CRC-32 so call sites can use readable
    labels ("shuffle", task index, epoch index) while staying stable
    across runs and platforms.
    """
    ints = [int(master_seed) & 0xFFFFFFFFFFFFFFFF]
    for tok in tokens:
        if isinstance(tok, str):
            ints.append(zlib.crc32(tok.encode("utf-8")))
        else:
            ints.append(int(tok) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))


def as_matrix(values) -> Matrix:
    """Coerce to a 2-D float64 array, rejecting other ranks."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


def check_finite(arr: np.ndarray, context: str) -> None:
    """Raise DomainError if ``arr`` contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite values in {context}")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product ``a @ b`` with an explicit shape check.

    Raises ShapeError naming both shapes when the inner dimensions
    disagree.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: "
                         f"inner dimensions {a.shape[1]} != {b.shape[0]}")
    return a @ b


def random_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of 0..n-1 (Fisher-Yates via PCG64)."""
    if n < 1:
        raise DomainError(f"permutation length must be >= 1, got {n}")
    return rng.permutation(n)


def gaussian_fill(shape: tuple[int, int], std: float,
                  rng: np.random.Generator) -> Matrix:
    """Matrix of i.i.d. normal(0, std^2) entries."""
    if std <= 0:
        raise DomainError(f"std must be positive, got {std}")
    rows, cols = int(shape[0]), int(shape[1])
    if rows < 1 or cols < 1:
        raise ShapeError(f"matrix shape must be positive, got {(rows, cols)}")
    return rng.normal(0.0, std, size=(rows, cols))
