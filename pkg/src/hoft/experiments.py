"""Experiment drivers behind the command-line subcommands.

Each ``*_rows`` function returns a list of dicts (one per CSV row) in
configuration order, plus a list of failure messages for the thresholds it
asserts. Nothing here writes files.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import thresholds as th
from .adapters import HoftAdapter, ShoftAdapter, init_identity, init_lora, init_oft
from .cwy import (Mode, apply_q, build_factors, exact_q, factored_orthogonality_error,
                  materialize_q, sequential_chain_apply)
from .densemat import Rng, gaussian_matrix
from .grad import finite_diff_grads, loss_and_grads, max_relative_error, radial_alignment
from .metrics import energy_difference_experiment, procrustes_bound_check

__all__ = [
    "GradCase",
    "GRADCHECK_CASES",
    "figure1_rows",
    "energy_rows",
    "procrustes_rows",
    "gradcheck_case",
    "gradcheck_rows",
    "bench_rows",
    "is_nondecreasing",
]


def is_nondecreasing(values, slack: float = th.MONOTONE_SLACK) -> bool:
    values = list(values)
    return all(b >= a - slack for a, b in zip(values, values[1:]))


def figure1_rows(dims, ranks, trials: int, seed: int):
    """Mean/max orthogonality error of the two-term CWY approximation."""
    rows, failures = [], []
    base = Rng(seed)
    index = 0
    for dim in dims:
        for rank in ranks:
            errs = []
            for _ in range(trials):
                u = gaussian_matrix(base.child(index), dim, rank)
                index += 1
                errs.append(factored_orthogonality_error(build_factors(u, Mode.NEUMANN2)))
            rows.append({"dim": dim, "rank": rank, "mean_error": float(np.mean(errs)),
                         "max_error": float(np.max(errs))})
    for row in rows:
        if row["rank"] == 1 and row["mean_error"] >= th.RANK1_APPROX_TOL:
            failures.append(f"dim={row['dim']} rank=1 error {row['mean_error']:.3e} not ~0")
    for dim in dims:
        curve = [r["mean_error"] for r in rows if r["dim"] == dim]
        if not is_nondecreasing(curve):
            failures.append(f"dim={dim}: error not nondecreasing in rank")
    for rank in ranks:
        if rank <= 2:
            continue
        curve = [r["mean_error"] for r in rows if r["rank"] == rank]
        if not is_nondecreasing(curve[::-1]):
            failures.append(f"rank={rank}: error not nonincreasing in dimension")
    return rows, failures


def energy_rows(dims, ranks, trials: int, seed: int, mode: Mode | str = Mode.NEUMANN2):
    rows, failures = [], []
    base = Rng(seed)
    index = 0
    for dim in dims:
        for rank in ranks:
            rep = energy_difference_experiment(dim, rank, trials, base.child(index * 7919), mode)
            index += 1
            rows.append({"dim": dim, "rank": rank, "mean_abs_diff": rep.mean_abs_diff,
                         "max_abs_diff": rep.max_abs_diff, "mean_energy": rep.mean_energy,
                         "mean_rel_diff": rep.mean_rel_diff,
                         "left_only_max_rel": rep.left_only_max_rel})
    for row in rows:
        if row["rank"] <= 2 and row["mean_rel_diff"] >= th.ENERGY_LOW_RANK_REL_TOL:
            failures.append(f"dim={row['dim']} rank={row['rank']}: relative HE difference "
                            f"{row['mean_rel_diff']:.3e}")
        if row["left_only_max_rel"] >= th.ENERGY_LEFT_ONLY_REL_TOL:
            failures.append(f"dim={row['dim']} rank={row['rank']}: left-only control "
                            f"{row['left_only_max_rel']:.3e}")
    for dim in dims:
        curve = [r["mean_abs_diff"] for r in rows if r["dim"] == dim and r["rank"] >= 2]
        if not is_nondecreasing(curve):
            failures.append(f"dim={dim}: energy difference not nondecreasing for rank >= 2")
    return rows, failures


def procrustes_rows(m: int, n: int, rank: int, instances: int, seed: int):
    rows, failures = [], []
    base = Rng(seed)
    for i in range(instances):
        rng = base.child(i)
        m0 = gaussian_matrix(rng, m, n)
        q_u = exact_q(build_factors(gaussian_matrix(rng, m, rank), Mode.EXACT))
        q_v = exact_q(build_factors(gaussian_matrix(rng, n, rank), Mode.EXACT))
        row = {"instance": i}
        try:
            res = procrustes_bound_check(m0, q_u, q_v)
            control = procrustes_bound_check(m0, q_u, np.eye(n))
        except (ArithmeticError, RuntimeError) as exc:
            failures.append(f"instance {i}: {exc}")
            rows.append({**row, "gap": float("nan"), "bound": float("nan"), "holds": False,
                         "bound_n": float("nan"), "triangle_bound": float("nan"),
                         "control_gap": float("nan"), "polar_error": float("nan")})
            continue
        rows.append({**row, "gap": res.gap, "bound": res.bound, "holds": res.holds,
                     "bound_n": res.bound_n, "triangle_bound": res.triangle_bound,
                     "control_gap": control.gap, "polar_error": res.polar_error})
        if not res.holds:
            failures.append(f"instance {i}: gap {res.gap:.3e} exceeds bound {res.bound:.3e}")
        if res.gap > res.triangle_bound:
            failures.append(f"instance {i}: gap exceeds 2||M||_F")
        if res.polar_error >= th.POLAR_ORTHO_TOL:
            failures.append(f"instance {i}: polar factor orthogonality {res.polar_error:.3e}")
        if control.gap >= th.PROCRUSTES_ONE_SIDED_TOL:
            failures.append(f"instance {i}: one-sided control gap {control.gap:.3e}")
    return rows, failures


@dataclass(frozen=True)
class GradCase:
    kind: str
    m: int
    n: int
    rank: int
    mode: str = "neumann2"
    zero_residual: bool = False


GRADCHECK_CASES = (
    GradCase("hoft", 8, 8, 1),
    GradCase("hoft", 8, 8, 2),
    GradCase("hoft", 16, 16, 3),
    GradCase("hoft", 16, 16, 4),
    GradCase("hoft", 64, 64, 8),
    GradCase("hoft", 16, 16, 3, "exact"),
    GradCase("hoft", 16, 8, 4, "exact"),
    GradCase("hoft", 64, 16, 8, "exact"),
    GradCase("shoft", 8, 8, 1),
    GradCase("shoft", 16, 16, 2),
    GradCase("shoft", 16, 16, 3),
    GradCase("shoft", 64, 64, 4),
    GradCase("shoft", 16, 16, 8, "exact"),
    GradCase("lora", 8, 8, 1),
    GradCase("lora", 16, 16, 4),
    GradCase("lora", 64, 64, 8),
    GradCase("oft", 8, 8, 2),
    GradCase("oft", 16, 16, 4),
    GradCase("oft", 64, 64, 8),
    GradCase("shoft", 8, 16, 4),
)


def _perturbed_pairs(u: np.ndarray, rng: Rng, scale: float = 0.5) -> np.ndarray:
    """Perturb the paired columns; an odd trailing zero column stays zero.

    A lone column (rank 1) is perturbed too, otherwise the adapter is inert.
    """
    out = u.copy()
    live = u.shape[1] if u.shape[1] == 1 else 2 * (u.shape[1] // 2)
    if live:
        out[:, :live] += scale * gaussian_matrix(rng, u.shape[0], live)
    return out


def gradcheck_fixture(case: GradCase, rng: Rng):
    """Seeded ``(adapter, w0, x, y_target)`` away from the identity point."""
    m, n, r = case.m, case.n, case.rank
    if case.kind in ("hoft", "shoft"):
        hoft = init_identity(m, n, r, rng, case.mode)
        hoft = hoft.with_parameters(u=_perturbed_pairs(hoft.u, rng),
                                    v=_perturbed_pairs(hoft.v, rng))
        if case.kind == "hoft":
            adapter = hoft
        else:
            adapter = ShoftAdapter(hoft, 1.0 + 0.2 * rng.normal(m))
    elif case.kind == "lora":
        lora = init_lora(m, n, r, rng)
        adapter = lora.with_parameters(b=0.5 * gaussian_matrix(rng, r, n))
    elif case.kind == "oft":
        oft = init_oft(m, n, r)
        adapter = oft.with_parameters(
            blocks=0.3 * rng.normal(oft.blocks.size).reshape(oft.blocks.shape))
    else:
        raise ValueError(f"unknown kind {case.kind!r}")
    # unit-variance outputs keep the loss O(1), so FD rounding stays far
    # below the gradient entries
    w0 = gaussian_matrix(rng, m, n) / np.sqrt(n)
    x = gaussian_matrix(rng, n, 4)
    y = adapter.forward(w0, x)
    if not case.zero_residual:
        y = y + 0.5 * gaussian_matrix(rng, m, 4)
    return adapter, w0, x, y


def gradcheck_case(case: GradCase, rng: Rng) -> dict:
    adapter, w0, x, y = gradcheck_fixture(case, rng)
    analytic = loss_and_grads(adapter, w0, x, y)
    numeric = finite_diff_grads(adapter, w0, x, y)
    radial = float("nan")
    if isinstance(adapter, (HoftAdapter, ShoftAdapter)):
        radial = max(radial_alignment(analytic.grads["u"], adapter.u),
                     radial_alignment(analytic.grads["v"], adapter.v))
    max_abs = max(float(np.max(np.abs(g))) for g in analytic.grads.values())
    return {"kind": case.kind, "m": case.m, "n": case.n, "rank": case.rank,
            "mode": case.mode, "zero_residual": case.zero_residual, "loss": analytic.loss,
            "max_rel_err": max_relative_error(analytic, numeric), "radial": radial,
            "max_abs_grad": max_abs}


def gradcheck_rows(seed: int):
    """The 20-case suite plus one zero-residual control row."""
    rows, failures = [], []
    base = Rng(seed)
    cases = list(GRADCHECK_CASES) + [GradCase("hoft", 16, 16, 4, zero_residual=True)]
    for i, case in enumerate(cases):
        row = {"case": i, **gradcheck_case(case, base.child(i))}
        rows.append(row)
        label = f"case {i} ({case.kind} {case.m}x{case.n} r={case.rank} {case.mode})"
        if case.zero_residual:
            if row["max_abs_grad"] >= th.ZERO_RESIDUAL_GRAD_TOL:
                failures.append(f"{label}: gradient {row['max_abs_grad']:.3e} at zero residual")
            continue
        tol = th.LORA_GRAD_REL_TOL if case.kind == "lora" else th.GRAD_REL_TOL
        if not row["max_rel_err"] < tol:
            failures.append(f"{label}: max relative error {row['max_rel_err']:.3e} >= {tol}")
        if case.kind in ("hoft", "shoft") and not row["radial"] < th.RADIAL_TOL:
            failures.append(f"{label}: radial component {row['radial']:.3e}")
    return rows, failures


def _median_time_ns(fn, repeats: int, inner: int = 3) -> float:
    fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter_ns() - start) / inner)
    return float(np.median(samples))


def bench_rows(m: int, n: int, ranks, repeats: int, seed: int):
    """Time three ways of computing ``Q X`` for ``X`` of shape ``m x n``.

    * ``cwy_factored``: two-term factors, ``X + U (B (U^T X))``,
    * ``sequential_chain``: one reflection at a time,
    * ``materialized_exact``: build the exact ``m x m`` ``Q``, then multiply.
    """
    rows, failures = [], []
    base = Rng(seed)
    for i, rank in enumerate(ranks):
        rng = base.child(i)
        u = gaussian_matrix(rng, m, rank)
        x = gaussian_matrix(rng, m, n)
        timings = {
            "cwy_factored": _median_time_ns(
                lambda: apply_q(build_factors(u, Mode.NEUMANN2), x), repeats),
            "sequential_chain": _median_time_ns(lambda: sequential_chain_apply(u, x), repeats),
            "materialized_exact": _median_time_ns(
                lambda: materialize_q(build_factors(u, Mode.EXACT)) @ x, repeats),
        }
        for method, ns in timings.items():
            rows.append({"method": method, "m": m, "n": n, "rank": rank, "mean_ns": ns})
        speedup = timings["materialized_exact"] / timings["cwy_factored"]
        if speedup < th.BENCH_MIN_SPEEDUP:
            failures.append(f"rank={rank}: factored path slower than materialized "
                            f"(speedup {speedup:.2f})")
    return rows, failures


def fit_exponent(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])
