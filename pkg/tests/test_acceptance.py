"""Acceptance criteria 1-12, one PASS/FAIL line each (run with ``pytest -s`` to see them)."""
import time

import numpy as np
import pytest

from hoft import thresholds as th
from hoft.adapters import HoftAdapter, init_identity
from hoft.cwy import (Mode, approx_q, build_factors, exact_q, neumann_inverse,
                      orthogonality_error)
from hoft.densemat import Rng, gaussian_matrix, triangular_solve_upper
from hoft.experiments import (bench_rows, energy_rows, figure1_rows, gradcheck_rows,
                              procrustes_rows)
from hoft.metrics import weight_decay_invariance
from hoft.quant import dequantize, quantize
from hoft.train import make_task, teacher_adapter, train
from hoft.grad import mse_loss

pytestmark = pytest.mark.acceptance


def report(number, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, f"criterion {number}: {detail}"


def moments(w, k):
    return np.trace(np.linalg.matrix_power(w.T @ w, k))


def test_c01_exact_orthogonality():
    start = time.perf_counter()
    dims, ranks = (64, 256, 1024), (1, 2, 4, 8, 16)
    worst = 0.0
    for i in range(100):
        n, r = dims[i % 3], ranks[(i // 3) % 5]
        u = gaussian_matrix(Rng(1000 + i), n, r)
        worst = max(worst, orthogonality_error(exact_q(build_factors(u, Mode.EXACT))))
    elapsed = time.perf_counter() - start
    report(1, worst < th.EXACT_ORTHO_TOL and elapsed < 30,
           f"100 configs, worst orthogonality error {worst:.2e} (< 1e-12), {elapsed:.1f}s")


def test_c02_figure1_shape():
    start = time.perf_counter()
    dims, ranks = [256, 1024, 4096], [1, 2, 4, 8, 16, 32]
    rows, failures = figure1_rows(dims, ranks, 20, seed=0)
    elapsed = time.perf_counter() - start
    err = {(r["dim"], r["rank"]): r["mean_error"] for r in rows}
    rank1 = max(err[(d, 1)] for d in dims)
    ok = (not failures and rank1 < 1e-12 and err[(4096, 8)] < err[(256, 8)]
          and elapsed < 300)
    report(2, ok, f"rank-1 max {rank1:.1e}; rank 8: dim 256 {err[(256, 8)]:.2e} vs "
                  f"dim 4096 {err[(4096, 8)]:.2e}; failures {failures}; {elapsed:.1f}s")


def test_c03_neumann_completeness():
    full_worst = 0.0
    for r in range(1, 33):
        f = build_factors(gaussian_matrix(Rng(r), 256, r), Mode.EXACT)
        ref = triangular_solve_upper(f.s, np.eye(r))
        full_worst = max(full_worst, float(np.max(np.abs(neumann_inverse(f, r) - ref))))
    two_worst = 0.0
    for r in (1, 2):
        for seed in range(10):
            u = gaussian_matrix(Rng(100 + seed), 64, r)
            qa = approx_q(build_factors(u, Mode.NEUMANN2))
            qe = exact_q(build_factors(u, Mode.EXACT))
            two_worst = max(two_worst, float(np.max(np.abs(qa - qe))))
    report(3, full_worst < th.NEUMANN_FULL_TOL and two_worst < th.RANK1_APPROX_TOL,
           f"full series vs solve {full_worst:.1e} (< 1e-10), "
           f"two-term at r<=2 {two_worst:.1e} (< 1e-12)")


def test_c04_identity_initialization():
    worst, count, parities = 0.0, 0, set()
    for i in range(20):
        rng = Rng(200 + i)
        m, n, r = 16 * (1 + i % 4), 8 * (1 + i % 5), 1 + i % 8
        parities.add(r % 2)
        w0 = gaussian_matrix(rng, m, n)
        x = gaussian_matrix(rng, n, 6)
        for mode in Mode:
            ad = init_identity(m, n, r, rng, mode)
            worst = max(worst, float(np.max(np.abs(ad.forward(w0, x) - w0 @ x))))
            count += 1
    report(4, worst < th.IDENTITY_INIT_TOL and parities == {0, 1},
           f"{count} runs (20 configs x 2 modes, odd and even r), worst {worst:.1e} (< 1e-11)")


def test_c05_weight_decay_indifference():
    worst = 0.0
    for seed in range(5):
        u = gaussian_matrix(Rng(300 + seed), 64, 4)
        for mode in Mode:
            # lambda = -1 is the c = 2 rescaling
            worst = max(worst, weight_decay_invariance(u, [0.1, 0.5, 0.9, -1.0], mode))
    report(5, worst < th.WEIGHT_DECAY_TOL,
           f"max ||Q(cU) - Q(U)||_F {worst:.1e} (< 1e-12), both modes")


def test_c06_spectrum_preservation():
    worst = 0.0
    for i in range(20):
        rng = Rng(400 + i)
        m, n, r = 12 + 4 * (i % 5), 10 + 3 * (i % 4), 1 + i % 6
        ad = HoftAdapter(gaussian_matrix(rng, m, r), gaussian_matrix(rng, n, r), Mode.EXACT)
        w0 = gaussian_matrix(rng, m, n)
        w = ad.weight(w0)
        for k in (1, 2, 3):
            worst = max(worst, abs(moments(w, k) - moments(w0, k)) / moments(w0, k))
    report(6, worst < th.SPECTRUM_REL_TOL, f"tr-moment k=1..3 worst rel {worst:.1e} (< 1e-8)")


def test_c07_procrustes_bound():
    start = time.perf_counter()
    rows, failures = procrustes_rows(32, 32, 4, 50, seed=0)
    elapsed = time.perf_counter() - start
    holds = sum(r["holds"] for r in rows)
    ratio = max(r["gap"] / r["bound"] for r in rows)
    control = max(r["control_gap"] for r in rows)
    polar = max(r["polar_error"] for r in rows)
    ok = not failures and holds == 50 and elapsed < 60
    report(7, ok, f"{holds}/50 hold, max gap/bound {ratio:.3f}, control gap {control:.1e}, "
                  f"polar orthogonality {polar:.1e}, {elapsed:.1f}s")


def test_c08_gradient_correctness():
    rows, failures = gradcheck_rows(seed=0)
    suite = [r for r in rows if not r["zero_residual"]]
    worst = max(r["max_rel_err"] for r in suite)
    lora = max(r["max_rel_err"] for r in suite if r["kind"] == "lora")
    radial = max(r["radial"] for r in suite if r["kind"] in ("hoft", "shoft"))
    ok = not failures and len(suite) == 20 and worst < th.GRAD_REL_TOL and radial < th.RADIAL_TOL
    report(8, ok, f"20 cases, worst rel {worst:.1e} (< 1e-5), LoRA {lora:.1e} (< 1e-7), "
                  f"radial {radial:.1e} (< 1e-6)")


def test_c09_energy_shape():
    start = time.perf_counter()
    rows, failures = energy_rows([256], [1, 2, 4, 8, 16, 32], 10, seed=0)
    elapsed = time.perf_counter() - start
    low = max(r["mean_rel_diff"] for r in rows if r["rank"] <= 2)
    left = max(r["left_only_max_rel"] for r in rows)
    curve = ", ".join(f"{r['mean_abs_diff']:.3g}" for r in rows)
    report(9, not failures and elapsed < 120,
           f"r<=2 rel diff {low:.1e} (< 1e-3), left-only {left:.1e} (< 1e-8), "
           f"curve [{curve}], {elapsed:.1f}s")


def test_c10_toy_training():
    start = time.perf_counter()
    rot = make_task("rotation", 32, 32, 4, 0.0, Rng(7))
    scaled = make_task("scaled-rotation", 32, 32, 4, 0.0, Rng(7))
    hoft = train("hoft", rot, 4, 5000, 1e-2, 32, Rng(8))
    shoft = train("shoft", scaled, 4, 5000, 1e-2, 32, Rng(8))
    x = gaussian_matrix(Rng(9), 32, 64)
    witness = max(mse_loss(teacher_adapter(rot, mode), rot.w0, x, rot.w_teacher @ x)
                  for mode in Mode)
    elapsed = time.perf_counter() - start
    ok = (hoft.final_loss < th.TRAIN_LOSS_TOL and shoft.final_loss < th.TRAIN_LOSS_TOL
          and witness < th.WITNESS_LOSS_TOL and elapsed < 120)
    report(10, ok, f"HOFT/rotation {hoft.final_loss:.1e}, SHOFT/scaled {shoft.final_loss:.1e} "
                   f"(< 1e-4), witness {witness:.1e} (< 1e-10), {elapsed:.1f}s")


def test_c11_quantized():
    w = gaussian_matrix(Rng(0), 256, 256)
    rms = np.sqrt(np.mean((dequantize(quantize(w, 64)) - w) ** 2)) / np.sqrt(np.mean(w * w))
    rms_ok = abs(rms - th.NF4_RMS_REL_ERROR) <= th.NF4_RMS_REL_TOL * th.NF4_RMS_REL_ERROR

    task = make_task("rotation", 32, 32, 4, 0.0, Rng(7))
    full = train("hoft", task, 4, 5000, 1e-2, 32, Rng(8))
    qbase = quantize(task.w0, 64)
    before = qbase.codes.tobytes() + qbase.absmax.tobytes()
    qtask = task.rebase(dequantize(qbase))
    quant = train("hoft", qtask, 4, 5000, 1e-2, 32, Rng(8), qbase=qbase)
    same = before == qbase.codes.tobytes() + qbase.absmax.tobytes()
    conv = quant.final_loss < th.QUANT_TRAIN_FACTOR * full.final_loss
    report(11, rms_ok and conv and same,
           f"round-trip rms {rms:.4f} (frozen {th.NF4_RMS_REL_ERROR:.4f} +-20%), "
           f"quantized loss {quant.final_loss:.1e} vs full {full.final_loss:.1e} (< 10x), "
           f"codes unchanged {same}")


def test_c12_bench():
    start = time.perf_counter()
    rows, _ = bench_rows(2048, 64, [4, 16], repeats=5, seed=0)
    elapsed = time.perf_counter() - start
    t = {(r["method"], r["rank"]): r["mean_ns"] for r in rows}
    speedup = t[("materialized_exact", 16)] / t[("cwy_factored", 16)]
    report(12, speedup >= th.BENCH_MIN_SPEEDUP and elapsed < 120,
           f"m=2048 r=16 speedup {speedup:.1f}x (>= 1), factored "
           f"{t[('cwy_factored', 16)] / 1e6:.2f} ms, sequential "
           f"{t[('sequential_chain', 16)] / 1e6:.2f} ms, {elapsed:.1f}s")
