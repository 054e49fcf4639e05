"""Mean-squared-error loss and its parameter gradients for every adapter kind.

Gradients are hand-derived adjoints of the factored forward pass. For the
CWY part, with ``Q x = x + U B z`` and ``z = U^T x``:

* ``dU`` collects ``g (B z)^T + x (B^T U^T g)^T`` from the two explicit
  occurrences of ``U``;
* ``dB = (U^T g) z^T`` is pulled back through ``B(S)`` (two-term series or
  ``-S^{-1}``) and then through ``S = triu(U^T U)`` with halved diagonal.

Clamped diagonal entries of ``S`` are constants, so they pass no gradient.
:func:`finite_diff_grads` is the independent central-difference oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapters import Adapter, HoftAdapter, LoraAdapter, OftCayleyAdapter, ShoftAdapter
from .cwy import CwyFactors, Mode, inner_matrix
from .densemat import DimensionError, as_matrix, inverse

__all__ = ["GradBundle", "mse_loss", "loss_and_grads", "finite_diff_grads", "grad_check",
           "radial_alignment", "central_difference", "max_relative_error", "FD_STEP"]

FD_STEP = 1e-5


@dataclass(frozen=True)
class GradBundle:
    loss: float
    grads: dict[str, np.ndarray]

    @property
    def d_u(self):
        return self.grads.get("u")

    @property
    def d_v(self):
        return self.grads.get("v")

    @property
    def d_m(self):
        return self.grads.get("m")


def _check(adapter: Adapter, w0, x, y_target):
    w0 = as_matrix(w0)
    x = as_matrix(x)
    y_target = as_matrix(y_target)
    if y_target.shape != (adapter.m, x.shape[1]):
        raise DimensionError(
            f"target is {y_target.shape}, forward produces {(adapter.m, x.shape[1])}")
    return w0, x, y_target


def mse_loss(adapter: Adapter, w0, x, y_target) -> float:
    w0, x, y_target = _check(adapter, w0, x, y_target)
    res = adapter.forward(w0, x) - y_target
    return float(np.mean(res * res))


def _inner_vjp(f: CwyFactors, b: np.ndarray, d_b: np.ndarray) -> np.ndarray:
    """Pull ``dL/dB`` back to ``dL/dS`` (upper triangle only)."""
    if f.mode is Mode.EXACT:
        # B = -S^{-1}  =>  dS = S^{-T} dB S^{-T} = B^T dB B^T
        d_s = np.triu(b.T @ d_b @ b.T)
    else:
        d = f.d_inv
        a = f.a
        d_s = np.triu(d_b * d[:, None] * d[None, :], 1)
        da = d_b * a
        d_d = da @ d + d @ da - np.diag(d_b)
        d_s[np.diag_indices(f.r)] = -d_d * d * d
    d_s[np.diag_indices(f.r)] *= ~f.clamped
    return d_s


def _gram_vjp(u: np.ndarray, d_s: np.ndarray) -> np.ndarray:
    p = np.triu(d_s, 1) + np.diag(np.diag(d_s)) / 2.0
    return u @ (p + p.T)


def _apply_q_vjp(f: CwyFactors, b: np.ndarray, x: np.ndarray, g: np.ndarray):
    """Adjoint of ``x -> x + U B U^T x``: returns ``(dx, dU)``."""
    u = f.u
    z = u.T @ x
    ug = u.T @ g
    d_x = g + u @ (b.T @ ug)
    d_u = g @ (b @ z).T + x @ (b.T @ ug).T
    d_b = ug @ z.T
    d_u += _gram_vjp(u, _inner_vjp(f, b, d_b))
    return d_x, d_u


def _hoft_grads(hoft: HoftAdapter, magnitude, w0, x, y_target):
    fu, fv = hoft.factors()
    bu, bv = inner_matrix(fu), inner_matrix(fv)
    xv = x + fv.u @ (bv @ (fv.u.T @ x))
    h = w0 @ xv
    g = h if magnitude is None else magnitude[:, None] * h
    y = g + fu.u @ (bu @ (fu.u.T @ g))
    res = y - y_target
    loss = float(np.mean(res * res))
    gy = 2.0 * res / res.size
    d_g, d_u = _apply_q_vjp(fu, bu, g, gy)
    grads = {"u": d_u}
    if magnitude is not None:
        grads["m"] = np.sum(d_g * h, axis=1)
        d_g = magnitude[:, None] * d_g
    _, d_v = _apply_q_vjp(fv, bv, x, w0.T @ d_g)
    grads["v"] = d_v
    return loss, grads


def _lora_grads(adapter: LoraAdapter, w0, x, y_target):
    bx = adapter.b @ x
    res = w0 @ x + adapter.scaling * (adapter.a @ bx) - y_target
    gy = 2.0 * res / res.size
    return float(np.mean(res * res)), {
        "a": adapter.scaling * gy @ bx.T,
        "b": adapter.scaling * (adapter.a.T @ gy) @ x.T,
    }


def _oft_grads(adapter: OftCayleyAdapter, w0, x, y_target):
    h = w0 @ x
    y = adapter.rotate(h)
    res = y - y_target
    gy = 2.0 * res / res.size
    b = adapter.block_size
    eye = np.eye(b)
    d_blocks = np.empty_like(adapter.blocks)
    for i, r in enumerate(adapter.skew_blocks()):
        rows = slice(i * b, (i + 1) * b)
        n_inv = inverse(eye - r)
        q = (eye + r) @ n_inv
        d_q = gy[rows] @ h[rows].T
        d_r = (eye + q).T @ d_q @ n_inv.T
        d_blocks[i] = (d_r - d_r.T) / 2.0
    return float(np.mean(res * res)), {"blocks": d_blocks}


def loss_and_grads(adapter: Adapter, w0, x, y_target) -> GradBundle:
    w0, x, y_target = _check(adapter, w0, x, y_target)
    if isinstance(adapter, HoftAdapter):
        loss, grads = _hoft_grads(adapter, None, w0, x, y_target)
    elif isinstance(adapter, ShoftAdapter):
        loss, grads = _hoft_grads(adapter.hoft, adapter.magnitude, w0, x, y_target)
    elif isinstance(adapter, LoraAdapter):
        loss, grads = _lora_grads(adapter, w0, x, y_target)
    elif isinstance(adapter, OftCayleyAdapter):
        loss, grads = _oft_grads(adapter, w0, x, y_target)
    else:
        raise TypeError(f"unknown adapter type {type(adapter).__name__}")
    if not np.isfinite(loss):
        raise FloatingPointError("forward pass produced a non-finite loss")
    return GradBundle(loss, grads)


def central_difference(fn, p: float, h: float = FD_STEP) -> float:
    """``(fn(p + h) - fn(p - h)) / (2 h)`` for a scalar function."""
    return (fn(p + h) - fn(p - h)) / (2.0 * h)


_XP = np.longdouble


def _solve_ext(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting in extended precision."""
    a, b = a.copy(), b.copy()
    n = a.shape[0]
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if a[p, k] == 0:
            raise ArithmeticError("singular matrix in reference solve")
        a[[k, p]], b[[k, p]] = a[[p, k]], b[[p, k]]
        f = a[k + 1:, k:k + 1] / a[k, k]
        a[k + 1:] -= f * a[k]
        b[k + 1:] -= f * b[k]
    x = np.empty_like(b)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x


def _reference_q(u: np.ndarray, mode: Mode, clamp_eps: float) -> np.ndarray:
    r = u.shape[1]
    gram = u.T @ u
    diag = np.diag(gram) / 2
    s_c = np.triu(gram, 1) + np.diag(np.maximum(diag, _XP(clamp_eps)))
    if mode is Mode.EXACT:
        b = -_solve_ext(s_c, np.eye(r, dtype=_XP))
    else:
        d = 1 / np.diag(s_c)
        b = d[:, None] * np.triu(gram, 1) * d[None, :] - np.diag(d)
    return np.eye(u.shape[0], dtype=_XP) + u @ b @ u.T


def _reference_forward(adapter: Adapter, params: dict, w0, x) -> np.ndarray:
    """Forward pass rebuilt from the definitions in extended precision."""
    if isinstance(adapter, (HoftAdapter, ShoftAdapter)):
        qu = _reference_q(params["u"], adapter.mode, adapter.clamp_eps)
        qv = _reference_q(params["v"], adapter.mode, adapter.clamp_eps)
        inner = w0 @ (qv @ x)
        if "m" in params:
            inner = params["m"][:, None] * inner
        return qu @ inner
    if isinstance(adapter, LoraAdapter):
        return w0 @ x + _XP(adapter.scaling) * (params["a"] @ (params["b"] @ x))
    if isinstance(adapter, OftCayleyAdapter):
        y = w0 @ x
        b = adapter.block_size
        eye = np.eye(b, dtype=_XP)
        out = np.empty_like(y)
        for i, blk in enumerate(params["blocks"]):
            r = (blk - blk.T) / 2
            rows = slice(i * b, (i + 1) * b)
            # (I + R)(I - R)^{-1} = (I - R)^{-1}(I + R) since the factors commute
            out[rows] = _solve_ext(eye - r, (eye + r) @ y[rows])
        return out
    raise TypeError(f"unknown adapter type {type(adapter).__name__}")


def finite_diff_grads(adapter: Adapter, w0, x, y_target, h: float = FD_STEP) -> GradBundle:
    """Central differences, one parameter entry at a time, full forward per probe.

    Probes run through an independent reference forward in extended
    precision, and the numerator ``loss(p + h) - loss(p - h)`` is evaluated
    as ``mean((r+ - r-) * (r+ + r-))``. Both keep rounding noise well below
    the smallest gradient entries of interest.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    w0, x, y_target = _check(adapter, w0, x, y_target)
    w0e, xe, ye = w0.astype(_XP), x.astype(_XP), y_target.astype(_XP)
    params = {k: np.asarray(v, dtype=_XP) for k, v in adapter.parameters().items()}
    step = _XP(h)
    grads = {}
    for name, value in params.items():
        g = np.empty(value.shape)
        for idx in np.ndindex(value.shape):
            probe = value.copy()
            probe[idx] = value[idx] + step
            r_up = _reference_forward(adapter, {**params, name: probe}, w0e, xe) - ye
            probe[idx] = value[idx] - step
            r_down = _reference_forward(adapter, {**params, name: probe}, w0e, xe) - ye
            g[idx] = float(np.mean((r_up - r_down) * (r_up + r_down)) / (2 * step))
        grads[name] = g
    return GradBundle(mse_loss(adapter, w0, x, y_target), grads)


def max_relative_error(analytic: GradBundle, numeric: GradBundle) -> float:
    worst = 0.0
    for name, a in analytic.grads.items():
        f = numeric.grads[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def grad_check(adapter: Adapter, w0, x, y_target, h: float = FD_STEP) -> float:
    return max_relative_error(loss_and_grads(adapter, w0, x, y_target),
                              finite_diff_grads(adapter, w0, x, y_target, h))


def radial_alignment(grad: np.ndarray, param: np.ndarray) -> float:
    """``|<grad, param>| / (||grad|| ||param||)``; 0 when either is zero."""
    denom = np.linalg.norm(grad) * np.linalg.norm(param)
    if denom == 0.0:
        return 0.0
    return float(abs(np.sum(grad * param)) / denom)
