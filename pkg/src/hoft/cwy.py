"""Accumulated Householder products in compact WY (CWY) form.

A stack of Householder vectors ``U = (u_1 | ... | u_r)`` defines

    Q = (I - u_1 u_1^T / tau_1) ... (I - u_r u_r^T / tau_r) = I - U S^{-1} U^T

with ``tau_i = u_i^T u_i / 2`` and ``S`` the upper triangle of ``U^T U`` with
its diagonal halved. Splitting ``S = D + A`` (diagonal plus strictly upper)
gives the finite series ``S^{-1} = sum_{i<r} (-D^{-1} A)^i D^{-1}``; the
production path keeps only its first two terms, so that

    Q ~= I + U (D^{-1} A D^{-1} - D^{-1}) U^T.

Everything here is written in terms of the small ``r x r`` "inner" matrix
``B`` with ``Q = I + U B U^T``. ``apply_q`` never forms ``Q``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .densemat import DimensionError, as_matrix, triangular_solve_upper

__all__ = [
    "Mode",
    "CwyFactors",
    "DEFAULT_CLAMP_EPS",
    "build_factors",
    "inner_matrix",
    "exact_q",
    "approx_q",
    "materialize_q",
    "neumann_inverse",
    "apply_q",
    "orthogonality_error",
    "factored_orthogonality_error",
    "sequential_chain_q",
    "sequential_chain_apply",
]

DEFAULT_CLAMP_EPS = 1e-6


class Mode(str, Enum):
    EXACT = "exact"
    NEUMANN2 = "neumann2"


@dataclass(frozen=True)
class CwyFactors:
    u: np.ndarray
    s: np.ndarray
    d_inv: np.ndarray
    a: np.ndarray
    mode: Mode
    clamp_eps: float

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def r(self) -> int:
        return self.u.shape[1]

    @property
    def clamped(self) -> np.ndarray:
        """Boolean mask of diagonal entries that hit the clamp."""
        return np.diag(self.s) < self.clamp_eps

    def s_clamped(self) -> np.ndarray:
        return self.a + np.diag(1.0 / self.d_inv)


def build_factors(u, mode: Mode | str = Mode.NEUMANN2,
                  clamp_eps: float = DEFAULT_CLAMP_EPS) -> CwyFactors:
    u = as_matrix(u)
    m, r = u.shape
    if m < 1 or r < 1:
        raise DimensionError(f"need m >= 1 and r >= 1, got U of shape {u.shape}")
    if r > m:
        raise DimensionError(f"rank {r} exceeds dimension {m}")
    if not np.all(np.isfinite(u)):
        raise ValueError("Householder vectors contain non-finite entries")
    if clamp_eps <= 0:
        raise ValueError("clamp_eps must be positive")
    gram = u.T @ u
    s = np.triu(gram)
    diag = np.diag(gram) / 2.0
    s[np.diag_indices(r)] = diag
    a = np.triu(s, 1)
    d_inv = 1.0 / np.maximum(diag, clamp_eps)
    return CwyFactors(u=u, s=s, d_inv=d_inv, a=a, mode=Mode(mode), clamp_eps=float(clamp_eps))


def neumann_inverse(f: CwyFactors, terms: int) -> np.ndarray:
    """Partial sum ``sum_{i<terms} (-D^{-1} A)^i D^{-1}``.

    ``D^{-1} A`` is strictly upper triangular, so ``terms >= r`` gives the
    exact inverse of the (clamped) ``S``.
    """
    if terms < 1:
        raise ValueError("terms must be >= 1")
    step = -f.d_inv[:, None] * f.a
    power = np.eye(f.r)
    total = np.eye(f.r)
    for _ in range(1, min(terms, f.r)):
        power = power @ step
        total = total + power
    return total * f.d_inv[None, :]


def inner_matrix(f: CwyFactors) -> np.ndarray:
    """The ``r x r`` matrix ``B`` with ``Q = I + U B U^T`` for ``f.mode``."""
    if f.mode is Mode.EXACT:
        return -triangular_solve_upper(f.s_clamped(), np.eye(f.r))
    d = f.d_inv
    return d[:, None] * f.a * d[None, :] - np.diag(d)


def materialize_q(f: CwyFactors) -> np.ndarray:
    u = f.u
    return np.eye(f.m) + u @ inner_matrix(f) @ u.T


def exact_q(f: CwyFactors) -> np.ndarray:
    if f.mode is not Mode.EXACT:
        raise ValueError("exact_q needs factors built with mode='exact'")
    return materialize_q(f)


def approx_q(f: CwyFactors) -> np.ndarray:
    if f.mode is not Mode.NEUMANN2:
        raise ValueError("approx_q needs factors built with mode='neumann2'")
    return materialize_q(f)


def apply_q(f: CwyFactors, x, side: str = "left") -> np.ndarray:
    """``Q x`` as ``x + U (B (U^T x))``; cost ``O(m r k + r^2 k)``."""
    if side != "left":
        raise ValueError("only left application is supported")
    x = as_matrix(x)
    if x.shape[0] != f.m:
        raise DimensionError(f"x has {x.shape[0]} rows, Q is {f.m}x{f.m}")
    return x + f.u @ (inner_matrix(f) @ (f.u.T @ x))


def orthogonality_error(q) -> float:
    """``||I - Q Q^T||_F / sqrt(n)``."""
    q = as_matrix(q)
    n = q.shape[0]
    if q.shape != (n, n):
        raise DimensionError(f"orthogonality_error needs a square matrix, got {q.shape}")
    return float(np.linalg.norm(np.eye(n) - q @ q.T) / np.sqrt(n))


def factored_orthogonality_error(f: CwyFactors) -> float:
    """Same metric as :func:`orthogonality_error` without forming ``Q``.

    ``Q Q^T - I = U C U^T`` with ``C = B + B^T + B G B^T`` and ``G = U^T U``,
    so ``||Q Q^T - I||_F^2 = tr(C G C G)``.
    """
    b = inner_matrix(f)
    g = f.u.T @ f.u
    c = b + b.T + b @ g @ b.T
    cg = c @ g
    sq = float(np.sum(cg * cg.T))
    return float(np.sqrt(max(sq, 0.0)) / np.sqrt(f.m))


def _taus(u: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", u, u) / 2.0


def sequential_chain_q(u) -> np.ndarray:
    """Left-to-right product of ``I - u_i u_i^T / tau_i``; zero columns are skipped."""
    u = as_matrix(u)
    m = u.shape[0]
    q = np.eye(m)
    for col, tau in zip(u.T, _taus(u)):
        if tau == 0.0:
            continue
        q = q - np.outer(q @ col, col) / tau
    return q


def sequential_chain_apply(u, x) -> np.ndarray:
    """``Q x`` by applying the reflections one at a time, last one first."""
    u = as_matrix(u)
    x = as_matrix(x).copy()
    if x.shape[0] != u.shape[0]:
        raise DimensionError(f"x has {x.shape[0]} rows, vectors have {u.shape[0]}")
    taus = _taus(u)
    for i in range(u.shape[1] - 1, -1, -1):
        if taus[i] == 0.0:
            continue
        col = u[:, i]
        x -= np.outer(col, (col @ x) / taus[i])
    return x
