import numpy as np
import pytest

from hoft import thresholds as th
from hoft.adapters import HoftAdapter, init_identity
from hoft.densemat import DimensionError, Rng, gaussian_matrix
from hoft.grad import finite_diff_grads, loss_and_grads, max_relative_error
from hoft.quant import Nf4Tensor, dequantize, nf4_levels, qforward, quantize


def rms(a):
    return float(np.sqrt(np.mean(a * a)))


def test_levels():
    lv = nf4_levels()
    assert lv.shape == (16,)
    assert np.all(np.diff(lv) > 0)
    assert np.count_nonzero(lv == 0.0) == 1
    assert lv[0] == -1.0 and lv[-1] == 1.0
    # asymmetric: one more positive level than negative
    assert (np.sum(lv < 0), np.sum(lv > 0)) == (7, 8)
    assert not np.allclose(lv, -lv[::-1])


def test_levels_match_reference_table():
    # published NF4 code book, rounded to 7 decimals
    table = [-1.0, -0.6961928, -0.5250731, -0.3949175, -0.2844414, -0.1847734, -0.0910500, 0.0,
             0.0795803, 0.1609302, 0.2461123, 0.3379152, 0.4407098, 0.5626170, 0.7229568, 1.0]
    assert np.max(np.abs(nf4_levels() - table)) < 1e-6


def test_zero_matrix():
    q = quantize(np.zeros((3, 5)), block_size=4)
    zero_code = int(np.flatnonzero(nf4_levels() == 0.0)[0])
    assert np.all(q.codes == zero_code)
    assert np.all(q.absmax == 0)
    assert np.array_equal(dequantize(q), np.zeros((3, 5)))


def test_single_entry_block():
    q = quantize(np.array([[0.7]]), block_size=1)
    assert np.isclose(q.absmax[0], np.float32(0.7))
    assert q.codes[0] == 15
    assert dequantize(q)[0, 0] == float(np.float32(0.7))


def test_round_trip_regression():
    w = gaussian_matrix(Rng(0), 256, 256)
    err = rms(dequantize(quantize(w, 64)) - w) / rms(w)
    assert abs(err - th.NF4_RMS_REL_ERROR) <= th.NF4_RMS_REL_TOL * th.NF4_RMS_REL_ERROR


def test_idempotent_on_image():
    w = gaussian_matrix(Rng(1), 20, 30)
    for dq in (False, True):
        q1 = quantize(w, 16, dq)
        q2 = quantize(dequantize(q1), 16, dq)
        assert np.array_equal(q1.codes, q2.codes)
        assert np.array_equal(dequantize(q1), dequantize(q2))


def test_double_quant_difference():
    w = gaussian_matrix(Rng(0), 256, 256)
    single, double = quantize(w, 64), quantize(w, 64, double_quant=True)
    diff = float(np.max(np.abs(dequantize(single) - dequantize(double))))
    assert diff <= th.NF4_DOUBLE_QUANT_MAX_DIFF * (1 + 1e-9)
    assert diff > 0
    # bounded by one scale step per block
    steps = np.repeat(double.second_scales.steps, double.second_scales.group_size)
    assert diff <= float(np.max(steps[:single.absmax.size])) / 2 + 1e-7


def test_qforward():
    rng = Rng(2)
    w = gaussian_matrix(rng, 32, 24)
    q = quantize(w, 64)
    x = gaussian_matrix(rng, 24, 5)
    ad = init_identity(32, 24, 4, rng)
    assert np.max(np.abs(qforward(ad, q, x) - dequantize(q) @ x)) < 1e-12
    full = HoftAdapter(gaussian_matrix(rng, 32, 2), gaussian_matrix(rng, 24, 2))
    gap = np.linalg.norm(qforward(full, q, x) - full.forward(w, x))
    assert gap <= np.linalg.norm(dequantize(q) - w) * np.linalg.norm(x, 2) * (1 + 1e-9)
    with pytest.raises(DimensionError):
        qforward(init_identity(24, 32, 2, rng), q, x)


def test_gradient_through_quantized_base():
    rng = Rng(3)
    q = quantize(gaussian_matrix(rng, 16, 16) / 4, 64)
    base = dequantize(q)
    ad = HoftAdapter(gaussian_matrix(rng, 16, 3), gaussian_matrix(rng, 16, 3))
    x, y = gaussian_matrix(rng, 16, 4), gaussian_matrix(rng, 16, 4)
    assert max_relative_error(loss_and_grads(ad, base, x, y),
                              finite_diff_grads(ad, base, x, y)) < th.GRAD_REL_TOL


def test_bad_inputs():
    with pytest.raises(ValueError):
        quantize(np.ones((2, 2)), block_size=0)
    q = quantize(np.ones((2, 2)), 4)
    bad = Nf4Tensor(2, 2, 4, np.array([0, 1, 2, 16], np.uint8), q.absmax, None)
    with pytest.raises(ValueError):
        dequantize(bad)
