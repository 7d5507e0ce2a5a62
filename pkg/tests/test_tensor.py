import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from veinseg.tensor import MAX_ELEMENTS, ShapeError, Tensor4, concat_channels, make, map2, reduce


def test_make_zero_fill():
    t = make(1, 1, 2, 2, 0.0)
    assert t.shape == (1, 1, 2, 2)
    assert np.all(t.array == 0.0)


def test_make_data_length():
    t = make(2, 3, 4, 5, 1.0)
    assert t.data.shape == (120,)
    assert np.all(t.data == 1.0)


def test_make_zero_dimension_rejected():
    with pytest.raises(ShapeError, match="zero dimension"):
        make(1, 1, 0, 1, 0.0)


def test_make_element_count_overflow_rejected():
    with pytest.raises(ShapeError, match="overflow"):
        make(1, 1, MAX_ELEMENTS, 2, 0.0)


def test_precision_selects_dtype():
    assert make(1, 1, 2, 2, 0.0, precision=32).array.dtype == np.float32
    assert make(1, 1, 2, 2, 0.0, precision=64).array.dtype == np.float64
    with pytest.raises(ShapeError):
        make(1, 1, 2, 2, 0.0, precision=16)


def test_get_after_constant_fill():
    assert make(1, 1, 2, 2, 7.0).get(0, 0, 0, 0) == 7.0


def test_set_then_get_round_trip():
    t = make(1, 1, 2, 2, 0.0)
    t.set(0, 0, 1, 1, 3.5)
    assert t.get(0, 0, 1, 1) == 3.5


def test_get_out_of_bounds():
    t = make(1, 1, 2, 2, 0.0)
    with pytest.raises(IndexError):
        t.get(0, 0, 2, 0)
    with pytest.raises(IndexError):
        t.set(0, 0, 0, -1, 1.0)


def test_linear_index_layout():
    t = make(2, 3, 4, 5, 0.0)
    t.set(1, 2, 3, 4, 9.0)
    i, j, y, x = 1, 2, 3, 4
    assert t.data[((i * 3 + j) * 4 + y) * 5 + x] == 9.0


@given(st.integers(0, 1), st.integers(0, 2), st.integers(0, 3), st.integers(0, 4),
       st.floats(-1e6, 1e6, allow_nan=False))
def test_round_trip_property(i, j, y, x, v):
    t = make(2, 3, 4, 5, 0.0)
    t.set(i, j, y, x, v)
    assert t.get(i, j, y, x) == v


def test_map2_add_example():
    a = Tensor4(np.array([1.0, 2.0]).reshape(1, 1, 1, 2))
    b = Tensor4(np.array([3.0, 4.0]).reshape(1, 1, 1, 2))
    assert map2(a, b, "add").array.tolist() == [[[[4.0, 6.0]]]]


def test_map2_mul_absorbing_zero():
    x = Tensor4(np.arange(12.0).reshape(1, 3, 2, 2))
    z = make(1, 3, 2, 2, 0.0)
    assert np.all(map2(x, z, "mul").array == 0.0)


def test_map2_sub():
    x = Tensor4(np.arange(4.0).reshape(1, 1, 2, 2))
    assert np.all(map2(x, x, "sub").array == 0.0)


def test_map2_shape_mismatch_names_both_shapes():
    a = make(1, 1, 2, 2, 0.0)
    b = make(1, 1, 2, 3, 0.0)
    with pytest.raises(ShapeError, match=r"\(1, 1, 2, 2\).*\(1, 1, 2, 3\)"):
        map2(a, b, "add")


def test_map2_unknown_op():
    a = make(1, 1, 2, 2, 0.0)
    with pytest.raises(ValueError, match="unknown op"):
        map2(a, a, "div")


def test_map2_precision_mismatch():
    with pytest.raises(ShapeError, match="precision"):
        map2(make(1, 1, 2, 2, 0.0, 32), make(1, 1, 2, 2, 0.0, 64), "add")


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=4, max_size=4),
       st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=4, max_size=4))
def test_map2_add_commutes_bitwise(xs, ys):
    a = Tensor4(np.array(xs).reshape(1, 1, 2, 2))
    b = Tensor4(np.array(ys).reshape(1, 1, 2, 2))
    assert np.array_equal(map2(a, b, "add").array, map2(b, a, "add").array)


def test_reduce_sum_of_ones():
    assert reduce(make(1, 1, 2, 2, 1.0), "sum") == 4.0


def test_reduce_mean():
    t = Tensor4(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
    assert reduce(t, "mean") == 2.5


def test_reduce_sum_zeros():
    assert reduce(make(2, 2, 3, 3, 0.0), "sum") == 0.0


@settings(max_examples=30)
@given(st.permutations(list(range(8))))
def test_reduce_sum_permutation_invariant_on_integers(perm):
    base = np.arange(1.0, 9.0)
    t = Tensor4(base[perm].reshape(1, 2, 2, 2))
    assert reduce(t, "sum") == 36.0


def test_concat_channels_counts_and_values():
    a = Tensor4(np.arange(1 * 2 * 3 * 4, dtype=np.float64).reshape(1, 2, 3, 4))
    b = Tensor4(np.arange(100, 100 + 1 * 3 * 3 * 4, dtype=np.float64).reshape(1, 3, 3, 4))
    c = concat_channels(a, b)
    assert c.c == 5
    assert np.array_equal(c.array[:, :2], a.array)
    assert np.array_equal(c.array[:, 2:], b.array)


def test_concat_channels_spatial_mismatch():
    with pytest.raises(ShapeError, match="mismatch"):
        concat_channels(make(1, 1, 4, 4, 0.0), make(1, 1, 8, 4, 0.0))
