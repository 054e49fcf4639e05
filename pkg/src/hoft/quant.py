"""Simulated 4-bit NormalFloat (NF4) blockwise quantization of a frozen base.

Codebook: the QLoRA construction. With ``offset = 0.9677083`` and the
standard normal quantile ``Phi^{-1}``, take ``Phi^{-1}`` at 9 points
``linspace(offset, 0.5, 9)`` minus the last (8 positive values), the
negatives of ``Phi^{-1}`` at ``linspace(offset, 0.5, 8)`` minus the last
(7 negative values), and an exact 0; sort and divide by the maximum. The
result has 7 negative levels, 0, and 8 positive levels spanning [-1, 1].

Quantization flattens the matrix row-major into blocks of ``block_size``
entries, scales each block by its absolute maximum (stored as float32), and
maps each entry to the nearest level (ties to the lower index). Double
quantization further stores the block scales as 8-bit affine codes per
group of 256 scales. Compute always happens on the dequantized float64
matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist

import numpy as np

from .adapters import Adapter
from .densemat import DimensionError, as_matrix

__all__ = ["Nf4Tensor", "ScaleCodes", "nf4_levels", "quantize", "dequantize", "qforward",
           "DEFAULT_BLOCK_SIZE", "SCALE_GROUP_SIZE"]

DEFAULT_BLOCK_SIZE = 64
SCALE_GROUP_SIZE = 256
_OFFSET = 0.9677083


@lru_cache(maxsize=1)
def _levels() -> tuple[float, ...]:
    ppf = NormalDist().inv_cdf
    pos = [ppf(p) for p in np.linspace(_OFFSET, 0.5, 9)[:-1]]
    neg = [-ppf(p) for p in np.linspace(_OFFSET, 0.5, 8)[:-1]]
    values = np.sort(np.array(pos + [0.0] + neg))
    return tuple(values / values.max())


def nf4_levels() -> np.ndarray:
    return np.array(_levels())


@dataclass(frozen=True)
class ScaleCodes:
    """8-bit affine codes for block scales, one ``(offset, step)`` per group."""

    codes: np.ndarray  # uint8, one per block
    offsets: np.ndarray  # float32, one per group
    steps: np.ndarray  # float32, one per group
    group_size: int = SCALE_GROUP_SIZE

    def decode(self) -> np.ndarray:
        group = np.arange(self.codes.size) // self.group_size
        return (self.offsets[group].astype(np.float64)
                + self.codes.astype(np.float64) * self.steps[group].astype(np.float64))


@dataclass(frozen=True)
class Nf4Tensor:
    rows: int
    cols: int
    block_size: int
    codes: np.ndarray  # uint8 in [0, 15], row-major, length rows * cols
    absmax: np.ndarray  # float32, one per block
    second_scales: ScaleCodes | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def scales(self) -> np.ndarray:
        if self.second_scales is not None:
            return self.second_scales.decode()
        return self.absmax.astype(np.float64)


def _nearest_level(x: np.ndarray) -> np.ndarray:
    levels = nf4_levels()
    mid = (levels[:-1] + levels[1:]) / 2.0
    # side="left": a value exactly on a midpoint goes to the lower index
    return np.searchsorted(mid, x, side="left").astype(np.uint8)


def _quantize_scales(absmax: np.ndarray, group_size: int) -> ScaleCodes:
    scales = absmax.astype(np.float64)
    ngroups = -(-scales.size // group_size)
    offsets = np.empty(ngroups, dtype=np.float32)
    steps = np.empty(ngroups, dtype=np.float32)
    codes = np.empty(scales.size, dtype=np.uint8)
    for g in range(ngroups):
        chunk = scales[g * group_size:(g + 1) * group_size]
        lo = np.float32(chunk.min())
        step = np.float32((chunk.max() - float(lo)) / 255.0)
        offsets[g], steps[g] = lo, step
        if step > 0:
            q = np.rint((chunk - float(lo)) / float(step))
        else:
            q = np.zeros_like(chunk)
        codes[g * group_size:(g + 1) * group_size] = np.clip(q, 0, 255).astype(np.uint8)
    return ScaleCodes(codes, offsets, steps, group_size)


def quantize(w, block_size: int = DEFAULT_BLOCK_SIZE, double_quant: bool = False) -> Nf4Tensor:
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    w = as_matrix(w)
    flat = w.reshape(-1)
    nblocks = -(-flat.size // block_size)
    padded = np.zeros(nblocks * block_size)
    padded[:flat.size] = flat
    blocks = padded.reshape(nblocks, block_size)
    absmax = np.max(np.abs(blocks), axis=1).astype(np.float32)
    scale = absmax.astype(np.float64)
    safe = np.where(scale > 0, scale, 1.0)
    codes = _nearest_level(blocks / safe[:, None]).reshape(-1)[:flat.size]
    second = _quantize_scales(absmax, SCALE_GROUP_SIZE) if double_quant else None
    return Nf4Tensor(w.shape[0], w.shape[1], block_size, codes, absmax, second)


def dequantize(q: Nf4Tensor) -> np.ndarray:
    codes = np.asarray(q.codes)
    if codes.size != q.rows * q.cols:
        raise ValueError(f"code array has {codes.size} entries, expected {q.rows * q.cols}")
    if codes.size and (codes.min() < 0 or codes.max() > 15):
        raise ValueError("NF4 codes must lie in [0, 15]")
    levels = nf4_levels()[codes.astype(np.intp)]
    block = np.arange(codes.size) // q.block_size
    return (levels * q.scales()[block]).reshape(q.rows, q.cols)


def qforward(adapter: Adapter, qbase: Nf4Tensor, x) -> np.ndarray:
    """Adapter forward on top of the dequantized (frozen) base."""
    if qbase.shape != (adapter.m, adapter.n):
        raise DimensionError(f"quantized base is {qbase.shape}, adapter expects "
                             f"{(adapter.m, adapter.n)}")
    return adapter.forward(dequantize(qbase), x)
