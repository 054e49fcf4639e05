import numpy as np
import pytest

from hoft import thresholds as th
from hoft.cwy import Mode, build_factors, exact_q, orthogonality_error
from hoft.densemat import Rng, gaussian_matrix
from hoft.metrics import (ConvergenceError, energy_difference_experiment, hyperspherical_energy,
                          polar_orthogonal_factor, procrustes_bound_check,
                          weight_decay_invariance)


def brute_energy(w):
    total = 0.0
    for i in range(w.shape[1]):
        for j in range(w.shape[1]):
            if i != j:
                total += 1.0 / np.linalg.norm(w[:, i] - w[:, j])
    return total


def random_orthogonal(seed, n, r=6):
    return exact_q(build_factors(gaussian_matrix(Rng(seed), n, r), Mode.EXACT))


def test_energy_hand_case():
    assert abs(hyperspherical_energy(np.eye(2)) - np.sqrt(2)) < 1e-15


def test_energy_brute_force():
    w = gaussian_matrix(Rng(0), 64, 8)
    assert abs(hyperspherical_energy(w) - brute_energy(w)) < 1e-12


def test_energy_rotation_invariant():
    w = gaussian_matrix(Rng(1), 30, 10)
    he = hyperspherical_energy(w)
    assert abs(hyperspherical_energy(random_orthogonal(2, 30) @ w) - he) / he < 1e-10


def test_energy_duplicate_columns():
    with pytest.raises(ZeroDivisionError):
        hyperspherical_energy(np.ones((3, 2)))


def test_energy_experiment_small():
    rng = Rng(3)
    reports = [energy_difference_experiment(64, r, 3, rng) for r in (1, 2, 8)]
    assert reports[0].mean_rel_diff < th.ENERGY_LOW_RANK_REL_TOL
    assert reports[1].mean_rel_diff < th.ENERGY_LOW_RANK_REL_TOL
    assert reports[2].mean_abs_diff > reports[1].mean_abs_diff
    assert all(r.left_only_max_rel < th.ENERGY_LEFT_ONLY_REL_TOL for r in reports)


def test_polar_fixed_points():
    q = random_orthogonal(4, 12)
    assert np.max(np.abs(polar_orthogonal_factor(q) - q)) < 1e-12
    assert np.max(np.abs(polar_orthogonal_factor(3 * np.eye(5)) - np.eye(5))) < 1e-12


def test_polar_properties():
    a = gaussian_matrix(Rng(5), 16, 16) + 4 * np.eye(16)
    q = polar_orthogonal_factor(a)
    assert orthogonality_error(q) < th.POLAR_ORTHO_TOL
    h = q.T @ a
    assert np.max(np.abs(h - h.T)) < 1e-10
    assert np.min(np.linalg.eigvalsh((h + h.T) / 2)) > 0
    ref_u, _, ref_vt = np.linalg.svd(a)
    assert np.max(np.abs(q - ref_u @ ref_vt)) < 1e-10


def test_polar_non_convergence():
    with pytest.raises(ConvergenceError):
        polar_orthogonal_factor(gaussian_matrix(Rng(6), 8, 8), max_iter=1)


def test_procrustes_controls():
    m0 = gaussian_matrix(Rng(7), 20, 14)
    qu = random_orthogonal(8, 20)
    assert procrustes_bound_check(m0, qu, np.eye(14)).gap < th.PROCRUSTES_ONE_SIDED_TOL
    res = procrustes_bound_check(m0, np.eye(20), np.eye(14))
    assert res.gap < 1e-12 and res.bound > 0 and res.holds


def test_procrustes_two_sided():
    m0 = gaussian_matrix(Rng(9), 32, 32)
    res = procrustes_bound_check(m0, random_orthogonal(10, 32, 4), random_orthogonal(11, 32, 4))
    assert res.holds and 0 < res.gap <= res.triangle_bound


@pytest.mark.parametrize("mode", list(Mode))
def test_weight_decay_invariance(mode):
    u = gaussian_matrix(Rng(12), 64, 4)
    assert weight_decay_invariance(u, [0.1, 0.5, 0.9], mode) < th.WEIGHT_DECAY_TOL
    assert weight_decay_invariance(u, [-1.0], mode) < th.WEIGHT_DECAY_TOL
