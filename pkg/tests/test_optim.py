import numpy as np
import pytest

import omnid.tensorgrad as tg
from omnid.tensorgrad import AdamW, NumericError, Tensor, WarmupCosineSchedule


def _param(value):
    p = tg.tensor(value, requires_grad=True, dtype=np.float64)
    return p


def test_single_step_closed_form():
    # bias correction makes m_hat = v_hat = 1, so the update is exactly lr
    p = _param(1.0)
    p.grad = np.asarray(1.0)
    AdamW({"p": p}, lr=0.1, betas=(0.9, 0.999), eps=0.0, weight_decay=0.0).step()
    assert p.numpy() == pytest.approx(0.9, abs=1e-15)


def test_zero_grad_zero_decay_is_identity():
    p = _param(np.array([1.0, -2.0, 0.5]))
    p.grad = np.zeros(3)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    before = p.numpy().copy()
    for _ in range(3):
        opt.step()
    assert np.array_equal(p.numpy(), before)


def test_decoupled_decay_only():
    p = _param(1.0)
    p.grad = np.asarray(0.0)
    AdamW({"p": p}, lr=0.1, weight_decay=0.1).step()
    assert p.numpy() == pytest.approx(0.99, abs=1e-12)


def test_step_counter_and_moment_shapes():
    p = _param(np.ones((2, 3)))
    opt = AdamW({"p": p}, lr=0.01)
    for expected in (1, 2, 3):
        p.grad = np.ones((2, 3))
        opt.step()
        assert opt.step_count == expected
    assert opt.m["p"].shape == (2, 3) and opt.v["p"].shape == (2, 3)


def test_nan_gradient_strict_rejected():
    p = _param(1.0)
    p.grad = np.asarray(np.nan)
    with pytest.raises(NumericError, match="'p'"):
        AdamW({"p": p}, nan_policy="strict").step()


def test_nan_gradient_lenient_skips_with_warning():
    p = _param(1.0)
    p.grad = np.asarray(np.nan)
    with pytest.warns(RuntimeWarning, match="skipping"):
        AdamW({"p": p}, nan_policy="lenient").step()
    assert p.numpy() == 1.0


def test_params_without_grad_skipped():
    p = _param(1.0)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
    opt.step()  # no grad set
    assert p.numpy() == 1.0


def test_warmup_ramp_values():
    sched = WarmupCosineSchedule(1e-4, 500, 10_000)
    assert sched.lr_at(250) == pytest.approx(5e-5, rel=1e-12)
    assert sched.lr_at(500) == pytest.approx(1e-4, rel=1e-12)
    assert sched.lr_at(0) == 0.0
    assert sched.lr_at(10_000) == pytest.approx(0.0, abs=1e-20)


def test_cosine_midpoint():
    sched = WarmupCosineSchedule(2.0, 0, 100)
    assert sched.lr_at(50) == pytest.approx(1.0, rel=1e-12)


def test_schedule_nonnegative_everywhere():
    sched = WarmupCosineSchedule(1e-4, 500, 2000)
    assert all(sched.lr_at(s) >= 0.0 for s in range(0, 2001, 7))


def test_warmup_must_be_shorter_than_total():
    with pytest.raises(ValueError, match="warmup"):
        WarmupCosineSchedule(1e-4, 100, 100)


def test_step_out_of_range_rejected():
    sched = WarmupCosineSchedule(1e-4, 10, 100)
    with pytest.raises(ValueError):
        sched.lr_at(101)


def test_gradient_clipping_scales_to_max_norm():
    from omnid.tensorgrad.optim import clip_grad_norm
    p = _param(np.zeros(4))
    p.grad = np.full(4, 3.0)  # norm 6
    norm = clip_grad_norm({"p": p}, 1.5)
    assert norm == pytest.approx(6.0)
    assert np.linalg.norm(p.grad) == pytest.approx(1.5)
