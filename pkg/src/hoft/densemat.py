"""Small dense linear-algebra core and the seeded random generator.

Matrices are plain 2-D ``numpy.ndarray`` objects (float64 unless a caller
asks otherwise). The helpers here add the shape checks and the few
routines the rest of the package needs written out by hand: back
substitution, LU with partial pivoting, and a Box-Muller normal sampler
on top of a fixed bit generator.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "SingularMatrixError",
    "Rng",
    "as_matrix",
    "matmul",
    "transpose",
    "add",
    "sub",
    "scale",
    "identity",
    "frobenius_norm",
    "triangular_solve_upper",
    "lu_factor",
    "lu_solve",
    "inverse",
    "gaussian_matrix",
]

SINGULAR_THRESHOLD = 1e-300


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class SingularMatrixError(ArithmeticError):
    """A pivot or diagonal entry is (numerically) zero."""


def as_matrix(a, dtype=np.float64) -> np.ndarray:
    a = np.asarray(a, dtype=dtype)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def _same_shape(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _same_shape(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = _same_shape(a, b)
    return a - b


def scale(a, c: float) -> np.ndarray:
    return as_matrix(a) * c


def identity(n: int) -> np.ndarray:
    return np.eye(n)


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def triangular_solve_upper(s, b, threshold: float = SINGULAR_THRESHOLD) -> np.ndarray:
    """Solve ``S X = B`` for upper-triangular ``S`` by back substitution.

    Only the upper triangle of ``s`` is read. Raises
    :class:`SingularMatrixError` if any ``|s[i, i]| < threshold``.
    """
    s = as_matrix(s)
    b = as_matrix(b)
    r = s.shape[0]
    if s.shape != (r, r):
        raise DimensionError(f"S must be square, got {s.shape}")
    if b.shape[0] != r:
        raise DimensionError(f"right-hand side has {b.shape[0]} rows, S has {r}")
    diag = np.diag(s)
    bad = np.flatnonzero(~(np.abs(diag) >= threshold))
    if bad.size:
        raise SingularMatrixError(f"zero diagonal entry at index {int(bad[0])}")
    x = np.empty_like(b)
    for i in range(r - 1, -1, -1):
        x[i] = (b[i] - s[i, i + 1:] @ x[i + 1:]) / diag[i]
    return x


def lu_factor(a) -> tuple[np.ndarray, np.ndarray]:
    """LU decomposition with partial pivoting, ``P A = L U`` packed in one array.

    Returns ``(lu, perm)`` where ``perm[i]`` is the source row of row ``i``.
    """
    lu = as_matrix(a).copy()
    n = lu.shape[0]
    if lu.shape != (n, n):
        raise DimensionError(f"LU needs a square matrix, got {lu.shape}")
    perm = np.arange(n)
    scale_ref = max(np.max(np.abs(lu)), 1.0) if n else 1.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) <= np.finfo(float).eps * scale_ref * 1e-3:
            raise SingularMatrixError(f"matrix is singular at column {k}")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm


def lu_solve(factors: tuple[np.ndarray, np.ndarray], b) -> np.ndarray:
    lu, perm = factors
    b = as_matrix(b)
    n = lu.shape[0]
    if b.shape[0] != n:
        raise DimensionError(f"right-hand side has {b.shape[0]} rows, expected {n}")
    y = b[perm].copy()
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    return triangular_solve_upper(lu, y)


def inverse(a) -> np.ndarray:
    a = as_matrix(a)
    return lu_solve(lu_factor(a), np.eye(a.shape[0]))


class Rng:
    """Seeded normal/uniform generator with a fixed, documented stream.

    Raw 64-bit words come from numpy's ``PCG64`` bit generator seeded with
    ``seed`` (bit streams of numpy bit generators are frozen across numpy
    releases). A word ``w`` becomes the uniform ``(w >> 11) * 2**-53`` in
    ``[0, 1)``. Normals use Box-Muller on consecutive word pairs
    ``(a, b)``: ``r = sqrt(-2 log(1 - u_a))``, emitting ``r cos(2 pi u_b)``
    then ``r sin(2 pi u_b)``. A request for an odd count drops the last
    sine, so every draw consumes an even number of words.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._bits = np.random.PCG64(self.seed)

    def child(self, index: int) -> "Rng":
        return Rng(self.seed ^ int(index))

    def raw(self, count: int) -> np.ndarray:
        return self._bits.random_raw(count)

    def uniform(self, count: int) -> np.ndarray:
        return (self.raw(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:count]


def gaussian_matrix(rng: Rng, m: int, n: int) -> np.ndarray:
    """``m x n`` matrix of i.i.d. standard normals, filled row-major."""
    if m < 1 or n < 1:
        raise DimensionError(f"gaussian_matrix needs m, n >= 1, got {m}x{n}")
    return rng.normal(m * n).reshape(m, n)
