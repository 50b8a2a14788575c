import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import omnid.tensorgrad as tg
from omnid.tensorgrad import ShapeError, Tensor

from oracles import conv2d_reference


def test_matmul_hand_example():
    a = tg.tensor([[1, 2], [3, 4]], dtype=np.float64)
    b = tg.tensor([[1], [1]], dtype=np.float64)
    assert np.array_equal((a @ b).numpy(), [[3], [7]])


def test_matmul_shape_mismatch_names_shapes():
    a = tg.tensor(np.zeros((2, 3)))
    b = tg.tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        a @ b


def test_softmax_uniform():
    out = tg.softmax(tg.tensor([0.0, 0.0, 0.0], dtype=np.float64)).numpy()
    assert np.allclose(out, 1.0 / 3.0, atol=1e-15)


def test_mean_reduce_constant_both_axes():
    x = tg.tensor(np.full((2, 3), 5.0), dtype=np.float64)
    assert np.allclose(x.mean(axis=0).numpy(), 5.0)
    assert np.allclose(x.mean(axis=1).numpy(), 5.0)


@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(x):
    out = tg.softmax(Tensor(x), axis=-1).numpy()
    assert np.all(out >= 0)
    assert np.abs(out.sum(axis=-1) - 1.0).max() < 1e-12


def test_concat_and_reshape_round_trip():
    a = tg.tensor(np.arange(6.0).reshape(2, 3))
    b = tg.tensor(np.arange(6.0, 12.0).reshape(2, 3))
    cat = tg.concat([a, b], axis=0)
    assert cat.shape == (4, 3)
    assert np.array_equal(cat.reshape((2, 2, 3)).numpy()[1], b.numpy())


def test_concat_shape_mismatch_rejected():
    with pytest.raises(ShapeError, match="concat"):
        tg.concat([tg.tensor(np.zeros((2, 3))), tg.tensor(np.zeros((2, 4)))], axis=0)


def test_conv2d_matches_scalar_reference():
    rng = tg.CounterRng(3)
    x = rng.normal((2, 3, 6, 7))
    w = rng.normal((4, 3, 3, 3))
    b = rng.normal((4,))
    out = tg.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).numpy()
    ref = conv2d_reference(x, w, b, stride=2, padding=1)
    assert np.abs(out - ref).max() < 1e-12


def test_conv2d_channel_mismatch_rejected():
    with pytest.raises(ShapeError, match="conv2d"):
        tg.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3))))


def test_apply_op_dispatch_and_unknown_kind():
    out = tg.apply_op("add", Tensor(np.ones(3)), Tensor(np.ones(3)))
    assert np.allclose(out.numpy(), 2.0)
    with pytest.raises(ValueError, match="unknown op kind"):
        tg.apply_op("nonsense", Tensor(np.ones(3)))


def test_debug_mode_catches_nonfinite():
    tg.set_debug_checks(True)
    try:
        with pytest.raises(FloatingPointError, match="log"):
            tg.log(Tensor(np.array([-1.0])))
    finally:
        tg.set_debug_checks(False)


def test_tensor_preserves_float64_arrays():
    arr = np.zeros(3, dtype=np.float64)
    assert Tensor(arr).dtype == np.float64
    assert Tensor([0.0, 1.0]).dtype == tg.get_default_dtype()


def test_dtype_scope_switches_default():
    with tg.dtype_scope(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_max_reduce_and_slicing():
    x = tg.tensor(np.arange(12.0).reshape(3, 4))
    assert x.max(axis=1).numpy().tolist() == [3.0, 7.0, 11.0]
    assert np.array_equal(x[1:].numpy(), np.arange(4.0, 12.0).reshape(2, 4))
