"""Diagnostics: hyperspherical energy, polar/Procrustes bound, decay invariance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cwy import DEFAULT_CLAMP_EPS, Mode, build_factors, materialize_q, orthogonality_error
from .densemat import DimensionError, Rng, as_matrix, frobenius_norm, gaussian_matrix, inverse

__all__ = [
    "EnergyReport",
    "ProcrustesResult",
    "ConvergenceError",
    "hyperspherical_energy",
    "energy_difference_experiment",
    "polar_orthogonal_factor",
    "procrustes_bound_check",
    "weight_decay_invariance",
]


class ConvergenceError(RuntimeError):
    pass


def hyperspherical_energy(w) -> float:
    """Sum over ordered column pairs ``i != j`` of ``1 / ||w_i - w_j||``."""
    w = as_matrix(w)
    n = w.shape[1]
    total = 0.0
    for i in range(n - 1):
        dist = np.sqrt(np.sum((w[:, i + 1:] - w[:, i:i + 1]) ** 2, axis=0))
        zero = np.flatnonzero(dist == 0.0)
        if zero.size:
            raise ZeroDivisionError(f"columns {i} and {i + 1 + int(zero[0])} coincide")
        total += float(np.sum(1.0 / dist))
    return 2.0 * total


@dataclass(frozen=True)
class EnergyReport:
    rank: int
    dim: int
    trials: int
    mean_abs_diff: float
    max_abs_diff: float
    mean_energy: float
    mean_rel_diff: float
    left_only_max_rel: float


def energy_difference_experiment(dim: int, rank: int, trials: int, rng: Rng,
                                 mode: Mode | str = Mode.NEUMANN2,
                                 clamp_eps: float = DEFAULT_CLAMP_EPS) -> EnergyReport:
    """``|HE(M) - HE(Q_U M Q_V)|`` for gaussian ``M``, ``U``, ``V``.

    The left-only control ``|HE(M) - HE(Q_U M)|`` is computed with the exact
    CWY factor on the same ``U``.
    """
    if not 1 <= rank <= dim:
        raise DimensionError(f"rank {rank} not in [1, {dim}]")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    diffs, energies, left = [], [], []
    for t in range(trials):
        trng = rng.child(t)
        m = gaussian_matrix(trng, dim, dim)
        u = gaussian_matrix(trng, dim, rank)
        v = gaussian_matrix(trng, dim, rank)
        qu = materialize_q(build_factors(u, mode, clamp_eps))
        qv = materialize_q(build_factors(v, mode, clamp_eps))
        he = hyperspherical_energy(m)
        energies.append(he)
        diffs.append(abs(he - hyperspherical_energy(qu @ m @ qv)))
        qu_exact = materialize_q(build_factors(u, Mode.EXACT, clamp_eps))
        left.append(abs(he - hyperspherical_energy(qu_exact @ m)) / he)
    diffs = np.array(diffs)
    energies = np.array(energies)
    return EnergyReport(rank, dim, trials, float(diffs.mean()), float(diffs.max()),
                        float(energies.mean()), float(np.mean(diffs / energies)),
                        float(max(left)))


def polar_orthogonal_factor(a, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Orthogonal polar factor by Newton's iteration ``X <- (X + X^{-T}) / 2``.

    Early iterates are rescaled by ``sqrt(||X^{-1}||_F / ||X||_F)``, which
    leaves the limit unchanged and shortens the initial phase; scaling is
    switched off once the update is small so the final steps are plain
    quadratically-convergent Newton steps.
    """
    x = as_matrix(a).copy()
    n = x.shape[0]
    if x.shape != (n, n):
        raise DimensionError(f"polar factor needs a square matrix, got {x.shape}")
    scaling = True
    for _ in range(max_iter):
        x_inv = inverse(x)
        if scaling:
            mu = np.sqrt(frobenius_norm(x_inv) / frobenius_norm(x))
            nxt = (mu * x + x_inv.T / mu) / 2.0
        else:
            nxt = (x + x_inv.T) / 2.0
        step = frobenius_norm(nxt - x)
        x = nxt
        if step < tol:
            return x
        if step < 1e-2 * np.sqrt(n):
            scaling = False
    raise ConvergenceError(f"polar iteration did not converge in {max_iter} steps")


@dataclass(frozen=True)
class ProcrustesResult:
    gap: float
    bound: float
    holds: bool
    bound_n: float
    triangle_bound: float
    polar_error: float


def procrustes_bound_check(m0, q_u, q_v) -> ProcrustesResult:
    """Compare the best one-sided fit of ``Q_U M0 Q_V`` with ``2 sqrt(m) ||M0||_F``.

    The optimal ``Q`` for ``min ||M_hat - Q M0||_F`` is the orthogonal polar
    factor of ``M_hat M0^T``.
    """
    m0 = as_matrix(m0)
    m, n = m0.shape
    m_hat = as_matrix(q_u) @ m0 @ as_matrix(q_v)
    q_star = polar_orthogonal_factor(m_hat @ m0.T)
    gap = frobenius_norm(m_hat - q_star @ m0)
    norm = frobenius_norm(m0)
    bound = 2.0 * np.sqrt(m) * norm
    return ProcrustesResult(gap, bound, bool(gap <= bound), 2.0 * np.sqrt(n) * norm, 2.0 * norm,
                            orthogonality_error(q_star))


def weight_decay_invariance(u, lambdas, mode: Mode | str = Mode.NEUMANN2,
                            clamp_eps: float = DEFAULT_CLAMP_EPS) -> float:
    """``max_lambda ||Q((1 - lambda) U) - Q(U)||_F``."""
    u = as_matrix(u)
    base = materialize_q(build_factors(u, mode, clamp_eps))
    worst = 0.0
    for lam in lambdas:
        q = materialize_q(build_factors((1.0 - lam) * u, mode, clamp_eps))
        worst = max(worst, frobenius_norm(q - base))
    return worst
