import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from turbovaed import tensor as tc
from turbovaed.errors import DomainError, NonFiniteError, ShapeError

shapes5 = st.tuples(*[st.integers(1, 3)] * 5)
finite = st.floats(-1e3, 1e3, allow_nan=False, width=32)


def arrays(shape=shapes5):
    return shape.flatmap(lambda s: hnp.arrays(np.float32, s, elements=finite))


def test_zeros_single_element():
    z = tc.zeros((1, 1, 1, 1, 1))
    assert z.shape == (1, 1, 1, 1, 1) and z[0, 0, 0, 0, 0] == 0.0


def test_zeros_empty_extent():
    assert tc.numel(tc.zeros((0, 3, 1, 1, 1))) == 0


def test_zeros_counts_elements():
    z = tc.zeros((2, 3, 4, 5, 6))
    assert z.size == 720 and not z.any() and z.dtype == np.float32


def test_zeros_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        tc.zeros((1, 2, 3))
    with pytest.raises(ShapeError):
        tc.zeros((1, -1, 1, 1, 1))


def test_zeros_unaddressable_size_fails_on_allocation():
    with pytest.raises((MemoryError, ValueError)):
        tc.zeros((2**20, 2**20, 2**20, 2**20, 2**20))


def test_layout_is_row_major():
    z = tc.zeros((2, 3, 4, 5, 6))
    assert z.flags.c_contiguous
    assert z.strides == (4 * 360, 4 * 120, 4 * 30, 4 * 6, 4)


@given(arrays())
def test_identities(x):
    np.testing.assert_array_equal(tc.add(x, tc.zeros_like(x)), x)
    np.testing.assert_array_equal(tc.scale(x, 1.0), x)
    assert not tc.sub(x, x).any()


def test_binary_ops_reject_shape_mismatch():
    with pytest.raises(ShapeError):
        tc.add(np.zeros((1, 1, 1, 1, 2)), np.zeros((1, 1, 1, 2, 1)))


def test_no_broadcasting_between_tensors():
    with pytest.raises(ShapeError):
        tc.sub(np.zeros((1, 2, 1, 1, 1)), np.zeros((1, 1, 1, 1, 1)))


def test_elementwise_map_applies_function():
    x = np.arange(4, dtype=np.float32).reshape(1, 1, 1, 1, 4)
    np.testing.assert_array_equal(tc.elementwise_map(np.maximum, x, 1.5), [[[[[1.5, 1.5, 2, 3]]]]])


def test_reduce_mean_abs_examples():
    assert tc.reduce_mean_abs(np.full((2, 1, 3, 1, 2), -2.0, np.float32)) == 2.0
    assert tc.reduce_mean_abs(np.array([1.0, -1.0, 0.0, 0.0], np.float32).reshape(1, 1, 1, 1, 4)) == 0.5
    assert tc.reduce_mean_abs(tc.zeros((1, 2, 1, 1, 1))) == 0.0


def test_reduce_mean_abs_empty_is_domain_error():
    with pytest.raises(DomainError):
        tc.reduce_mean_abs(tc.zeros((0, 1, 1, 1, 1)))


@given(arrays(), st.randoms(use_true_random=False))
def test_reduce_mean_abs_permutation_invariant(x, r):
    flat = x.reshape(-1).copy()
    r.shuffle(flat)
    assert tc.reduce_mean_abs(flat.reshape(x.shape)) == pytest.approx(tc.reduce_mean_abs(x), rel=1e-12)


@given(arrays())
def test_flatten_reshape_round_trip(x):
    y = tc.reshape(tc.flatten(x), x.shape)
    assert y.tobytes() == x.tobytes()


def test_reshape_rejects_wrong_count():
    with pytest.raises(ShapeError):
        tc.reshape(np.zeros(5), (1, 1, 1, 2, 3))


@given(shapes5.flatmap(lambda s: st.tuples(hnp.arrays(np.float32, s, elements=finite),
                                           hnp.arrays(np.float32, s, elements=finite))),
       st.floats(-10, 10, width=32))
def test_add_scale_linearity(ab, k):
    a, b = ab
    lhs = tc.scale(tc.add(a, b), k).astype(np.float64)
    rhs = tc.add(tc.scale(a, k), tc.scale(b, k)).astype(np.float64)
    # two roundings on each side; bound by a few ulps of the operand magnitudes
    tol = 4 * np.finfo(np.float32).eps * (abs(k) * (np.abs(a) + np.abs(b)) + 1e-30)
    assert np.all(np.abs(lhs - rhs) <= tol)


def test_debug_mode_catches_non_finite():
    x = np.full((1, 1, 1, 1, 1), 3e38, np.float32)
    with np.errstate(over="ignore"):
        tc.scale(x, 10.0)  # silent outside debug mode
    with tc.debug_checks():
        with pytest.raises(NonFiniteError):
            with np.errstate(over="ignore"):
                tc.scale(x, 10.0)
    assert not tc.debug_enabled()


def test_as_tensor5_rejects_other_ranks():
    with pytest.raises(ShapeError):
        tc.as_tensor5(np.zeros((2, 2)))
