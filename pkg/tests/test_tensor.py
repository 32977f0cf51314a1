import itertools

import numpy as np
import pytest

from actconv.tensor import ShapeError, NonFiniteError, as_tensor, check_finite, tensor_index, tensor_new, tensor_set


def test_new_zeros():
    t = tensor_new((1, 1, 2, 2), 0.0)
    assert t.shape == (1, 1, 2, 2)
    assert t.size == 4 and np.all(t == 0.0)


def test_new_fill_keeps_shape():
    t = tensor_new((2, 3, 4, 5), 1.0)
    assert t.shape == (2, 3, 4, 5) and t.size == 120 and np.all(t == 1.0)
    assert t.dtype == np.float64


def test_new_degenerate_dim():
    t = tensor_new((1, 1, 0, 5), 7.0)
    assert t.size == 0


def test_new_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        tensor_new((1, 2, 3), 0.0)
    with pytest.raises(ShapeError):
        tensor_new((1, -1, 2, 2), 0.0)
    with pytest.raises(OverflowError):
        tensor_new((2**20, 2**20, 2, 1), 0.0)


def test_index_layout():
    t = np.arange(4.0).reshape(1, 1, 2, 2)
    assert tensor_index(t, 0, 0, 1, 0) == 2
    t = np.array([5.0, 9.0]).reshape(1, 2, 1, 1)
    assert tensor_index(t, 0, 1, 0, 0) == 9


def test_index_bounds():
    t = tensor_new((1, 1, 3, 2))
    with pytest.raises(IndexError):
        tensor_index(t, 0, 0, 3, 0)
    with pytest.raises(IndexError):
        tensor_index(t, 0, 0, -1, 0)


@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (2, 3, 2, 2), (1, 2, 3, 4)])
def test_set_then_index_round_trip(shape):
    t = tensor_new(shape)
    for i, idx in enumerate(itertools.product(*(range(s) for s in shape))):
        tensor_set(t, *idx, float(i) + 0.5)
        assert tensor_index(t, *idx) == float(i) + 0.5
    # flat order is (n, c, h, w) lexicographic
    assert np.array_equal(t.reshape(-1), np.arange(t.size) + 0.5)


def test_as_tensor_and_finite_check():
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((2, 2)))
    assert as_tensor([[[[1]]]]).dtype == np.float64
    with pytest.raises(NonFiniteError):
        check_finite(np.array([1.0, np.nan]))
