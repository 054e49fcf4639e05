"""Teacher-student harness for fitting adapters on a frozen linear layer.

A :class:`Task` holds a frozen base ``w0`` and a teacher map of the form
``left @ diag(scale) @ w0 @ right + delta``:

* ``rotation``: ``left``, ``right`` are products of ``k`` reflections each,
* ``scaled-rotation``: the same plus a row scaling with entries in [0.5, 2],
* ``lowrank``: ``delta = A B`` with inner rank ``k``.

Teacher reflection vectors are orthonormal, so their two-term CWY
approximation is exact and a rank-``k`` adapter can represent the teacher in
either mode.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .adapters import (Adapter, HoftAdapter, ShoftAdapter, init_identity, init_lora, init_oft,
                       init_shoft)
from .cwy import DEFAULT_CLAMP_EPS, Mode, sequential_chain_q
from .densemat import DimensionError, Rng, gaussian_matrix
from .grad import loss_and_grads
from .quant import Nf4Tensor, dequantize

__all__ = [
    "TaskKind",
    "Task",
    "AdamState",
    "TrainTrace",
    "TrainingDivergedError",
    "make_task",
    "adam_step",
    "make_adapter",
    "train",
    "teacher_adapter",
    "smoothed",
]


class TaskKind(str, Enum):
    ROTATION = "rotation"
    SCALED_ROTATION = "scaled-rotation"
    LOWRANK = "lowrank"


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass(frozen=True)
class Task:
    kind: TaskKind
    w0: np.ndarray
    w_teacher: np.ndarray
    noise_std: float
    left: np.ndarray
    right: np.ndarray
    scale: np.ndarray
    delta: np.ndarray
    u_teacher: np.ndarray
    v_teacher: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w0.shape[1]

    def rebase(self, w0: np.ndarray) -> "Task":
        """Same teacher transformation applied to a different frozen base."""
        teacher = self.left @ (self.scale[:, None] * w0) @ self.right + self.delta
        return replace(self, w0=w0, w_teacher=teacher)


def _orthonormal(rng: Rng, dim: int, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros((dim, 0))
    q, _ = np.linalg.qr(gaussian_matrix(rng, dim, k))
    return q


def make_task(kind: TaskKind | str, m: int, n: int, k: int, noise_std: float, rng: Rng,
              scale=None) -> Task:
    kind = TaskKind(kind)
    if not 0 <= k <= min(m, n):
        raise DimensionError(f"k = {k} must lie in [0, min(m, n) = {min(m, n)}]")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    w0 = gaussian_matrix(rng, m, n)
    left, right = np.eye(m), np.eye(n)
    u_t, v_t = np.zeros((m, 0)), np.zeros((n, 0))
    s = np.ones(m)
    delta = np.zeros((m, n))
    if kind is TaskKind.LOWRANK:
        if k:
            delta = gaussian_matrix(rng, m, k) @ gaussian_matrix(rng, k, n) / np.sqrt(n)
    else:
        u_t = _orthonormal(rng, m, k)
        v_t = _orthonormal(rng, n, k)
        left = sequential_chain_q(u_t) if k else left
        right = sequential_chain_q(v_t) if k else right
        if kind is TaskKind.SCALED_ROTATION:
            s = 0.5 + 1.5 * rng.uniform(m) if scale is None else np.asarray(scale, float)
    task = Task(kind, w0, w0, float(noise_std), left, right, s, delta, u_t, v_t)
    return task.rebase(w0)


def teacher_adapter(task: Task, mode: Mode | str = Mode.NEUMANN2) -> HoftAdapter | ShoftAdapter:
    """Adapter carrying the teacher's own reflection vectors (and scaling)."""
    if task.kind is TaskKind.LOWRANK or task.u_teacher.shape[1] == 0:
        raise ValueError("only rotation tasks with k >= 1 have a reflection witness")
    hoft = HoftAdapter(task.u_teacher.copy(), task.v_teacher.copy(), Mode(mode))
    if task.kind is TaskKind.SCALED_ROTATION:
        return ShoftAdapter(hoft, task.scale.copy())
    return hoft


@dataclass(frozen=True)
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update (no weight decay). Inputs are not mutated."""
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(p):
            raise DimensionError(f"gradient for {name!r} has shape {np.shape(g)}, "
                                 f"parameter has {np.shape(p)}")
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)


@dataclass
class TrainTrace:
    steps: int
    losses: np.ndarray
    final_loss: float
    wall_time: float
    adapter: Adapter | None = None

    def write_csv(self, path, comments: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for key, value in (comments or {}).items():
                fh.write(f"# {key}={value}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "loss"])
            for i, loss in enumerate(self.losses):
                writer.writerow([i, repr(float(loss))])


def make_adapter(method: str, m: int, n: int, rank: int, rng: Rng,
                 mode: Mode | str = Mode.NEUMANN2,
                 clamp_eps: float = DEFAULT_CLAMP_EPS) -> Adapter:
    if method == "hoft":
        return init_identity(m, n, rank, rng, mode, clamp_eps)
    if method == "shoft":
        return init_shoft(m, n, rank, rng, mode, clamp_eps)
    if method == "lora":
        return init_lora(m, n, rank, rng)
    if method == "oft":
        return init_oft(m, n, rank)
    raise ValueError(f"unknown method {method!r}")


def train(method: str, task: Task, rank: int, steps: int, lr: float, batch: int, rng: Rng,
          mode: Mode | str = Mode.NEUMANN2, qbase: Nf4Tensor | None = None,
          adapter: Adapter | None = None) -> TrainTrace:
    """Fit an adapter to the teacher with Adam on fresh gaussian batches.

    With ``qbase`` the frozen base is its dequantized value; only adapter
    parameters are updated either way.
    """
    m, n = task.w0.shape
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if adapter is None:
        if not 1 <= rank <= min(m, n):
            raise DimensionError(f"rank {rank} not in [1, {min(m, n)}]")
        adapter = make_adapter(method, m, n, rank, rng, mode)
    base = dequantize(qbase) if qbase is not None else task.w0
    state = AdamState()
    losses = np.empty(steps)
    start = time.perf_counter()
    for step in range(steps):
        x = gaussian_matrix(rng, n, batch)
        y = task.w_teacher @ x
        if task.noise_std > 0:
            y = y + task.noise_std * gaussian_matrix(rng, m, batch)
        try:
            bundle = loss_and_grads(adapter, base, x, y)
        except FloatingPointError:
            raise TrainingDivergedError(step, float("nan")) from None
        losses[step] = bundle.loss
        params, state = adam_step(adapter.parameters(), bundle.grads, state, lr)
        adapter = adapter.with_parameters(**params)
    return TrainTrace(steps, losses, float(losses[-1]), time.perf_counter() - start, adapter)


def smoothed(losses, window: int = 100) -> np.ndarray:
    """Trailing moving average; entry ``i`` averages ``losses[max(0, i-window+1):i+1]``."""
    losses = np.asarray(losses, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(losses)])
    idx = np.arange(1, losses.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
