import numpy as np
import pytest

from hoft import thresholds as th
from hoft.cwy import Mode
from hoft.densemat import DimensionError, Rng
from hoft.grad import mse_loss
from hoft.train import (AdamState, TaskKind, TrainingDivergedError, adam_step, make_task,
                        smoothed, teacher_adapter, train)


def moments(w, k):
    return np.trace(np.linalg.matrix_power(w.T @ w, k))


def test_rotation_k0_is_identity():
    task = make_task("rotation", 8, 6, 0, 0.0, Rng(0))
    assert np.array_equal(task.w_teacher, task.w0)


def test_scaled_with_unit_scale_is_rotation():
    a = make_task(TaskKind.ROTATION, 10, 10, 3, 0.0, Rng(1))
    b = make_task(TaskKind.SCALED_ROTATION, 10, 10, 3, 0.0, Rng(1), scale=np.ones(10))
    assert np.array_equal(a.w_teacher, b.w_teacher)


def test_rotation_preserves_moments():
    task = make_task("rotation", 32, 32, 4, 0.0, Rng(2))
    for k in (1, 2, 3):
        rel = abs(moments(task.w_teacher, k) - moments(task.w0, k)) / moments(task.w0, k)
        assert rel < th.SPECTRUM_REL_TOL


def test_task_validation():
    with pytest.raises(DimensionError):
        make_task("rotation", 4, 4, 5, 0.0, Rng(0))
    with pytest.raises(ValueError):
        make_task("rotation", 4, 4, 1, -1.0, Rng(0))


@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("kind", ["rotation", "scaled-rotation"])
def test_representability_witness(kind, mode):
    task = make_task(kind, 32, 32, 4, 0.0, Rng(3))
    x = Rng(4).normal(32 * 16).reshape(32, 16)
    loss = mse_loss(teacher_adapter(task, mode), task.w0, x, task.w_teacher @ x)
    assert loss < th.WITNESS_LOSS_TOL


def test_adam_zero_gradient():
    params = {"p": np.array([1.0, -2.0])}
    new, state = adam_step(params, {"p": np.zeros(2)}, AdamState(), 0.1)
    assert np.array_equal(new["p"], params["p"]) and state.t == 1


def test_adam_constant_gradient_step_size():
    params, state = {"p": np.array(0.0)}, AdamState()
    for _ in range(50):
        before = float(params["p"])
        params, state = adam_step(params, {"p": np.array(-3.0)}, state, 0.01)
    assert abs((float(params["p"]) - before) - 0.01) < 1e-8


def test_adam_two_step_fixture():
    # p=1, g=(0.5, -0.2), lr=0.1: p1 = 1 - 0.1*0.5/(0.5+1e-8), then m=0.025, v=2.8975e-4
    params, state = {"p": np.array(1.0)}, AdamState()
    params, state = adam_step(params, {"p": np.array(0.5)}, state, 0.1)
    assert abs(float(params["p"]) - 0.900000002) < 1e-15
    params, state = adam_step(params, {"p": np.array(-0.2)}, state, 0.1)
    assert abs(float(params["p"]) - 0.8654394181165107) < 1e-15


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step({"p": np.zeros(2)}, {"p": np.zeros(3)}, AdamState(), 0.1)


def test_identity_task_starts_at_noise_floor():
    task = make_task("rotation", 16, 16, 0, 0.1, Rng(5))
    for method in ("hoft", "shoft", "lora", "oft"):
        trace = train(method, task, 4, 3, 1e-2, 256, Rng(6))
        assert abs(trace.losses[0] - 0.01) < 0.002


def test_training_is_deterministic():
    task = make_task("rotation", 12, 12, 2, 0.0, Rng(7))
    a = train("hoft", task, 2, 30, 1e-2, 8, Rng(8))
    b = train("hoft", task, 2, 30, 1e-2, 8, Rng(8))
    assert a.losses.tobytes() == b.losses.tobytes()


def test_short_training_reduces_loss():
    task = make_task("rotation", 16, 16, 2, 0.0, Rng(9))
    trace = train("hoft", task, 2, 600, 1e-2, 16, Rng(10))
    smooth = smoothed(trace.losses)
    assert smooth[-1] < smooth[99]
    assert np.array_equal(task.w0, make_task("rotation", 16, 16, 2, 0.0, Rng(9)).w0)


def test_divergence_reports_step():
    task = make_task("rotation", 6, 6, 1, 0.0, Rng(11))
    task = task.rebase(task.w0 * 1e300)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError) as info:
        train("hoft", task, 2, 5, 1e-2, 4, Rng(12))
    assert info.value.step == 0


def test_train_validation():
    task = make_task("rotation", 6, 6, 1, 0.0, Rng(0))
    with pytest.raises(ValueError):
        train("hoft", task, 2, 0, 1e-2, 4, Rng(0))
    with pytest.raises(DimensionError):
        train("hoft", task, 7, 5, 1e-2, 4, Rng(0))
    with pytest.raises(ValueError):
        train("dora", task, 2, 5, 1e-2, 4, Rng(0))


def test_smoothed_and_csv(tmp_path):
    assert smoothed([1.0, 3.0, 5.0], window=2).tolist() == [1.0, 2.0, 4.0]
    task = make_task("rotation", 6, 6, 1, 0.0, Rng(0))
    trace = train("hoft", task, 2, 3, 1e-2, 4, Rng(1))
    path = tmp_path / "t.csv"
    trace.write_csv(path, {"seed": 1})
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# seed=1", "step,loss"]
    assert len(lines) == 5 and float(lines[2].split(",")[1]) == trace.losses[0]
