"""Adapters wrapping a frozen linear map ``y = W0 x`` with ``W0`` of shape ``m x n``.

* :class:`HoftAdapter`: ``W = Q_U W0 Q_V`` with both orthogonal factors in
  CWY form; ``Q_V`` acts on the input side, ``Q_U`` on the output side.
* :class:`ShoftAdapter`: ``W = Q_U diag(m) W0 Q_V``.
* :class:`LoraAdapter`: ``W = W0 + scaling * A B`` (baseline).
* :class:`OftCayleyAdapter`: ``W = blockdiag(Q_1, ..., Q_k) W0`` with Cayley
  blocks (baseline).

Every adapter is an immutable value. ``parameters()`` returns the trainable
arrays by name and ``with_parameters`` builds an updated copy, which is all
the gradient and training code needs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cwy import DEFAULT_CLAMP_EPS, CwyFactors, Mode, apply_q, build_factors, materialize_q
from .densemat import DimensionError, Rng, as_matrix, gaussian_matrix, inverse

__all__ = [
    "HoftAdapter",
    "ShoftAdapter",
    "LoraAdapter",
    "OftCayleyAdapter",
    "Adapter",
    "paired_vectors",
    "init_identity",
    "init_shoft",
    "init_lora",
    "init_oft",
    "adapted_weight",
    "forward",
    "merge",
    "lora_forward",
    "cayley_block",
    "cayley_q",
    "param_count",
]


def _check_base(m: int, n: int, w0: np.ndarray) -> np.ndarray:
    w0 = as_matrix(w0)
    if w0.shape != (m, n):
        raise DimensionError(f"base weight is {w0.shape}, adapter expects {(m, n)}")
    return w0


def _check_input(n: int, x) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[0] != n:
        raise DimensionError(f"input has {x.shape[0]} rows, layer expects {n}")
    return x


@dataclass(frozen=True)
class HoftAdapter:
    u: np.ndarray
    v: np.ndarray
    mode: Mode = Mode.NEUMANN2
    clamp_eps: float = DEFAULT_CLAMP_EPS

    kind = "hoft"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.u.ndim != 2 or self.v.ndim != 2 or self.u.shape[1] != self.v.shape[1]:
            raise DimensionError(f"U {self.u.shape} and V {self.v.shape} must share rank")

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def factors(self) -> tuple[CwyFactors, CwyFactors]:
        return (build_factors(self.u, self.mode, self.clamp_eps),
                build_factors(self.v, self.mode, self.clamp_eps))

    def parameters(self) -> dict[str, np.ndarray]:
        return {"u": self.u, "v": self.v}

    def with_parameters(self, **params) -> "HoftAdapter":
        return replace(self, **params)

    def weight(self, w0) -> np.ndarray:
        w0 = _check_base(self.m, self.n, w0)
        fu, fv = self.factors()
        return materialize_q(fu) @ w0 @ materialize_q(fv)

    def forward(self, w0, x) -> np.ndarray:
        w0 = _check_base(self.m, self.n, w0)
        x = _check_input(self.n, x)
        fu, fv = self.factors()
        return apply_q(fu, w0 @ apply_q(fv, x))


@dataclass(frozen=True)
class ShoftAdapter:
    hoft: HoftAdapter
    magnitude: np.ndarray

    kind = "shoft"

    def __post_init__(self):
        if self.magnitude.shape != (self.hoft.m,):
            raise DimensionError(
                f"magnitude has shape {self.magnitude.shape}, expected ({self.hoft.m},)")

    m = property(lambda self: self.hoft.m)
    n = property(lambda self: self.hoft.n)
    rank = property(lambda self: self.hoft.rank)
    mode = property(lambda self: self.hoft.mode)
    clamp_eps = property(lambda self: self.hoft.clamp_eps)
    u = property(lambda self: self.hoft.u)
    v = property(lambda self: self.hoft.v)

    def parameters(self) -> dict[str, np.ndarray]:
        return {"u": self.hoft.u, "v": self.hoft.v, "m": self.magnitude}

    def with_parameters(self, **params) -> "ShoftAdapter":
        magnitude = params.pop("m", self.magnitude)
        return ShoftAdapter(self.hoft.with_parameters(**params), magnitude)

    def weight(self, w0) -> np.ndarray:
        w0 = _check_base(self.m, self.n, w0)
        fu, fv = self.hoft.factors()
        return materialize_q(fu) @ (self.magnitude[:, None] * w0) @ materialize_q(fv)

    def forward(self, w0, x) -> np.ndarray:
        w0 = _check_base(self.m, self.n, w0)
        x = _check_input(self.n, x)
        fu, fv = self.hoft.factors()
        return apply_q(fu, self.magnitude[:, None] * (w0 @ apply_q(fv, x)))


@dataclass(frozen=True)
class LoraAdapter:
    a: np.ndarray
    b: np.ndarray
    scaling: float = 1.0

    kind = "lora"
    mode = Mode.EXACT

    def __post_init__(self):
        if self.a.ndim != 2 or self.b.ndim != 2 or self.a.shape[1] != self.b.shape[0]:
            raise DimensionError(f"A {self.a.shape} and B {self.b.shape} do not chain")

    m = property(lambda self: self.a.shape[0])
    n = property(lambda self: self.b.shape[1])
    rank = property(lambda self: self.a.shape[1])

    def parameters(self) -> dict[str, np.ndarray]:
        return {"a": self.a, "b": self.b}

    def with_parameters(self, **params) -> "LoraAdapter":
        return replace(self, **params)

    def delta(self) -> np.ndarray:
        return self.scaling * (self.a @ self.b)

    def weight(self, w0) -> np.ndarray:
        return _check_base(self.m, self.n, w0) + self.delta()

    def forward(self, w0, x) -> np.ndarray:
        w0 = _check_base(self.m, self.n, w0)
        x = _check_input(self.n, x)
        return w0 @ x + self.scaling * (self.a @ (self.b @ x))


def cayley_block(r: np.ndarray) -> np.ndarray:
    """``(I + R)(I - R)^{-1}`` for one skew-symmetric block ``R``."""
    eye = np.eye(r.shape[0])
    return (eye + r) @ inverse(eye - r)


@dataclass(frozen=True)
class OftCayleyAdapter:
    """Block-diagonal Cayley rotation of the output side.

    ``blocks`` has shape ``(m // b, b, b)``. Only the skew part
    ``(R - R^T) / 2`` of each stored block enters the map, so any update
    direction is admissible.
    """

    blocks: np.ndarray
    n: int

    kind = "oft"
    mode = Mode.EXACT

    def __post_init__(self):
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise DimensionError(f"blocks must be (k, b, b), got {self.blocks.shape}")

    @property
    def block_size(self) -> int:
        return self.blocks.shape[1]

    @property
    def m(self) -> int:
        return self.blocks.shape[0] * self.blocks.shape[1]

    @property
    def rank(self) -> int:
        return self.block_size

    def skew_blocks(self) -> np.ndarray:
        return (self.blocks - np.transpose(self.blocks, (0, 2, 1))) / 2.0

    def block_qs(self) -> list[np.ndarray]:
        return [cayley_block(r) for r in self.skew_blocks()]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"blocks": self.blocks}

    def with_parameters(self, **params) -> "OftCayleyAdapter":
        return replace(self, **params)

    def rotate(self, y: np.ndarray) -> np.ndarray:
        b = self.block_size
        out = np.empty_like(y)
        for i, q in enumerate(self.block_qs()):
            out[i * b:(i + 1) * b] = q @ y[i * b:(i + 1) * b]
        return out

    def weight(self, w0) -> np.ndarray:
        return self.rotate(_check_base(self.m, self.n, w0))

    def forward(self, w0, x) -> np.ndarray:
        w0 = _check_base(self.m, self.n, w0)
        return self.rotate(w0 @ _check_input(self.n, x))


Adapter = HoftAdapter | ShoftAdapter | LoraAdapter | OftCayleyAdapter


def paired_vectors(dim: int, r: int, rng: Rng) -> np.ndarray:
    """``dim x r`` matrix of equal consecutive column pairs, zero last column if ``r`` is odd.

    The distinct vectors are Gram-Schmidt residuals of gaussian draws, so they
    are mutually orthogonal. ``S`` is then block diagonal with 2 x 2 blocks,
    on which the two-term inverse is exact, and ``Q = I`` holds in both modes.
    """
    out = np.zeros((dim, r))
    pairs = r // 2
    if pairs:
        q, tri = np.linalg.qr(gaussian_matrix(rng, dim, pairs))
        g = q * np.diag(tri)
        out[:, 0:2 * pairs:2] = g
        out[:, 1:2 * pairs:2] = g
    return out


def init_identity(m: int, n: int, r: int, rng: Rng, mode: Mode | str = Mode.NEUMANN2,
                  clamp_eps: float = DEFAULT_CLAMP_EPS) -> HoftAdapter:
    """HOFT adapter whose two orthogonal factors are exactly ``I``.

    Each pair ``(u | u)`` gives ``H(u) H(u) = I`` and a trailing zero column
    contributes an identity factor.
    """
    if not 1 <= r <= min(m, n):
        raise DimensionError(f"rank must satisfy 1 <= r <= min(m, n) = {min(m, n)}, got {r}")
    return HoftAdapter(paired_vectors(m, r, rng), paired_vectors(n, r, rng), Mode(mode), clamp_eps)


def init_shoft(m: int, n: int, r: int, rng: Rng, mode: Mode | str = Mode.NEUMANN2,
               clamp_eps: float = DEFAULT_CLAMP_EPS) -> ShoftAdapter:
    return ShoftAdapter(init_identity(m, n, r, rng, mode, clamp_eps), np.ones(m))


def init_lora(m: int, n: int, r: int, rng: Rng, scaling: float = 1.0) -> LoraAdapter:
    if not 1 <= r <= min(m, n):
        raise DimensionError(f"rank must satisfy 1 <= r <= min(m, n) = {min(m, n)}, got {r}")
    a = gaussian_matrix(rng, m, r) / np.sqrt(m)
    return LoraAdapter(a, np.zeros((r, n)), scaling)


def init_oft(m: int, n: int, block_size: int) -> OftCayleyAdapter:
    if block_size < 1 or m % block_size:
        raise DimensionError(f"block size {block_size} does not divide m = {m}")
    return OftCayleyAdapter(np.zeros((m // block_size, block_size, block_size)), n)


def adapted_weight(adapter: Adapter, w0) -> np.ndarray:
    return adapter.weight(w0)


def forward(adapter: Adapter, w0, x) -> np.ndarray:
    return adapter.forward(w0, x)


def merge(adapter: Adapter, w0) -> np.ndarray:
    """Fold the adapter into a plain weight for deployment."""
    return adapter.weight(w0)


def lora_forward(adapter: LoraAdapter, w0, x) -> np.ndarray:
    return adapter.forward(w0, x)


def cayley_q(adapter: OftCayleyAdapter) -> np.ndarray:
    b = adapter.block_size
    q = np.zeros((adapter.m, adapter.m))
    for i, block in enumerate(adapter.block_qs()):
        q[i * b:(i + 1) * b, i * b:(i + 1) * b] = block
    return q


def param_count(adapter: Adapter) -> int:
    if isinstance(adapter, HoftAdapter):
        return adapter.rank * (adapter.m + adapter.n)
    if isinstance(adapter, ShoftAdapter):
        return adapter.rank * (adapter.m + adapter.n) + adapter.m
    if isinstance(adapter, LoraAdapter):
        return adapter.rank * (adapter.m + adapter.n)
    if isinstance(adapter, OftCayleyAdapter):
        return adapter.m * (adapter.block_size - 1) // 2
    raise TypeError(f"unknown adapter type {type(adapter).__name__}")
