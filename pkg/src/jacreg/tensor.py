"""Dense float64 kernels and seeded randomness shared by every other module.

Matrices and vectors are plain numpy arrays (row-major, 64-bit) behind thin
validating helpers. numpy's BLAS-backed matmul is deterministic run-to-run
under a fixed thread count, which is what checkpoint reproducibility relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 2-d / 1-d float64 numpy arrays; the aliases document intent in signatures.
Matrix = np.ndarray
Vector = np.ndarray


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def as_matrix(data) -> Matrix:
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got ndim={m.ndim}")
    return m


def as_vector(data) -> Vector:
    v = np.ascontiguousarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-d vector, got ndim={v.ndim}")
    return v


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return a @ b


@dataclass(frozen=True)
class MatrixNorms:
    frobenius: float
    entrywise_l1: float
    row_l2_max: float


def norms(m: Matrix) -> MatrixNorms:
    """Frobenius norm, entrywise l1 norm, and the largest row l2 norm."""
    m = as_matrix(m)
    return MatrixNorms(
        frobenius=float(np.sqrt((m * m).sum())),
        entrywise_l1=float(np.abs(m).sum()),
        row_l2_max=float(np.sqrt((m * m).sum(axis=1)).max()) if m.size else 0.0,
    )


class Rng:
    """Seeded PCG64 stream; identical seed gives an identical sequence.

    `derive(index)` yields an independent child stream determined by
    (seed, index), used so per-sample work can be scheduled in any order
    without changing its draws.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._spawn_key = _spawn_key
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=_spawn_key))
        )

    def derive(self, index: int) -> "Rng":
        return Rng(self.seed, _spawn_key=self._spawn_key + (int(index),))

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
