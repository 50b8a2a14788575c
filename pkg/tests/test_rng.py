import math

import numpy as np
import pytest

from omnid.tensorgrad import CounterRng


def test_same_seed_same_stream():
    a, b = CounterRng(123), CounterRng(123)
    assert np.array_equal(a.uniform(100), b.uniform(100))
    assert np.array_equal(a.normal(100), b.normal(100))


def test_different_seeds_differ():
    assert not np.array_equal(CounterRng(1).uniform(50), CounterRng(2).uniform(50))


def test_cross_run_regression_values():
    # frozen from the defining implementation; guards platform drift
    got = CounterRng(42).uniform(4)
    assert np.allclose(got, [0.08299378, 0.68062795, 0.2664286, 0.66956054], atol=1e-8)
    got = CounterRng(42).split("noise").normal(4)
    assert np.allclose(got, [0.21481069, -0.49991419, 1.28512152, -1.74775927], atol=1e-8)
    assert CounterRng(7).permutation(8).tolist() == [3, 5, 6, 4, 0, 1, 2, 7]


def test_uniform_bounds_and_moments():
    u = CounterRng(5).uniform(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1.0 / 12.0) < 0.002


def test_box_muller_moments():
    z = CounterRng(6).normal(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01
    # rough tail sanity for the transform
    assert abs((np.abs(z) < 1.96).mean() - 0.95) < 0.01


def test_named_streams_are_independent_of_parent_state():
    parent = CounterRng(9)
    parent.uniform(17)  # advance the parent
    child_a = parent.split("alpha")
    fresh = CounterRng(9).split("alpha")
    assert np.array_equal(child_a.uniform(8), fresh.uniform(8))


def test_named_streams_differ_by_label():
    a = CounterRng(9).split("alpha").uniform(16)
    b = CounterRng(9).split("beta").uniform(16)
    assert not np.array_equal(a, b)


def test_integer_split_labels():
    a = CounterRng(9).split(3).uniform(4)
    b = CounterRng(9).split(4).uniform(4)
    assert not np.array_equal(a, b)


def test_permutation_is_a_permutation():
    for n in (0, 1, 2, 5, 33):
        perm = CounterRng(11).split(n).permutation(n)
        assert sorted(perm.tolist()) == list(range(n))


def test_integers_within_bounds():
    draws = CounterRng(4).integers(7, 1000)
    assert draws.min() >= 0 and draws.max() < 7
    with pytest.raises(ValueError):
        CounterRng(4).integers(0)


def test_counter_advances_per_draw():
    r = CounterRng(8)
    first = r.uniform(5)
    second = r.uniform(5)
    assert not np.array_equal(first, second)
    assert r.counter == 10


def test_scalar_shapes():
    r = CounterRng(10)
    assert np.ndim(r.uniform()) == 0
    assert np.ndim(r.normal()) == 0
    assert isinstance(r.integers(5), int)


def test_gaussian_pair_structure():
    """Box-Muller consumes two uniforms per output pair."""
    r = CounterRng(12)
    r.normal(4)
    assert r.counter == 4  # 2 pairs -> 4 uniforms
    r2 = CounterRng(12)
    r2.normal(3)
    assert r2.counter == 4  # odd count still burns full pairs
