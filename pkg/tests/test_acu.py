import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from actconv import gradcheck
from actconv.acu import (AcuLayer, SynapsePositions, acu_backward, acu_forward, apply_position_update,
                         init_positions, normalize_position_gradient)
from actconv.refconv import ConvParams, conv2d, conv2d_backward, conv2d_forward, embed_positions, lattice_positions
from actconv.tensor import ShapeError

CROSS = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]


def layer_for(points, rng, C=2, D=3, **kw):
    pos = SynapsePositions(np.array(points, dtype=float))
    return AcuLayer(rng.standard_normal((D, C, pos.K)), rng.standard_normal(D), pos, **kw)


def conv_twin(layer, kh, kw, dilation_pad):
    w = embed_positions(layer.weights, layer.positions.points, kh, kw)
    return ConvParams(w, layer.bias, stride=layer.stride, pad=dilation_pad)


def test_grid_equals_conv(rng):
    layer = layer_for(lattice_positions(3, 3, 1), rng)
    x = rng.standard_normal((2, 2, 7, 6))
    y, _ = acu_forward(x, layer)
    ref = conv2d(x, conv_twin(layer, 3, 3, 1))
    assert y.shape == ref.shape
    assert np.abs(y - ref).max() < 1e-9


def test_pointwise_affine(rng):
    layer = AcuLayer(np.full((1, 1, 1), 2.0), np.ones(1), SynapsePositions([[0.0, 0.0]]))
    x = rng.standard_normal((2, 1, 4, 5))
    y, _ = acu_forward(x, layer)
    assert np.array_equal(y, 2 * x + 1)


def test_ramp_half_pixel():
    x = np.add.outer(3 * np.arange(3.0), np.arange(3.0)).reshape(1, 1, 3, 3)
    layer = AcuLayer(np.ones((1, 1, 1)), np.zeros(1), SynapsePositions([[0.5, 0.5]], origin_fixed=False), pad=0)
    y, _ = acu_forward(x, layer)
    assert np.array_equal(y[0, 0], [[2.0, 3.0], [5.0, 6.0]])


@pytest.mark.parametrize("points,k,pad", [
    (lattice_positions(3, 3, 1), 3, 1),
    (lattice_positions(3, 3, 2), 5, 2),
    (CROSS, 3, 1),
])
@pytest.mark.parametrize("stride", [1, 2])
def test_integer_positions_match_sparse_conv(rng, points, k, pad, stride):
    layer = layer_for(points, rng, stride=stride)
    assert layer.pad == pad
    x = rng.standard_normal((2, 2, 8, 7))
    y, cache = acu_forward(x, layer)
    p = conv_twin(layer, k, k, pad)
    ref, ccache = conv2d_forward(x, p)
    assert np.abs(y - ref).max() < 1e-9
    dy = rng.standard_normal(y.shape)
    g = acu_backward(dy, cache, layer)
    dx, dw, db = conv2d_backward(dy, ccache, p)
    assert np.abs(g.d_input - dx).max() < 1e-6
    taps = (layer.positions.points + k // 2).astype(int)
    assert np.abs(g.d_weights - dw[:, :, taps[:, 0], taps[:, 1]]).max() < 1e-6
    assert np.abs(g.d_bias - db).max() < 1e-6


def sparse_brute(x, w, b, pts, base_r, base_c, OH, OW):
    """Loop oracle: y[n, d, oh, ow] = b[d] + sum_ck w[d, c, k] x[n, c, oh + base_r + a_k, ow + base_c + b_k]."""
    N, C, H, W = x.shape
    y = np.zeros((N, len(b), OH, OW)) + b[None, :, None, None]
    for k, (a, bb) in enumerate(pts.astype(int)):
        for oh in range(OH):
            for ow in range(OW):
                r, q = oh + base_r + a, ow + base_c + bb
                if 0 <= r < H and 0 <= q < W:
                    y[:, :, oh, ow] += x[:, :, r, q] @ w[:, :, k].T
    return y


@given(st.integers(0, 10_000))
def test_random_integer_positions_generalize_conv(seed):
    r = np.random.default_rng(seed)
    K = int(r.integers(1, 8))
    pts = r.integers(-2, 3, size=(K, 2)).astype(float)
    pts[0] = 0
    layer = layer_for(pts, r, C=2, D=2, pad=2)
    x = r.standard_normal((1, 2, int(r.integers(5, 9)), int(r.integers(5, 9))))
    y, _ = acu_forward(x, layer)
    lo_a, _, lo_b, _ = layer.span
    ref = sparse_brute(x, layer.weights, layer.bias, pts, -2 - lo_a, -2 - lo_b, *y.shape[2:])
    assert np.abs(ref - y).max() < 1e-9
    if layer.span == (-2, 2, -2, 2):
        dense = conv2d(x, ConvParams(embed_positions(layer.weights, pts, 5, 5), layer.bias, pad=2))
        assert np.abs(dense - y).max() < 1e-9


def test_zero_dy_gives_zero_grads(rng):
    layer = layer_for(np.r_[[[0, 0]], rng.uniform(-1.5, 1.5, (4, 2))], rng)
    x = rng.standard_normal((2, 2, 6, 6))
    y, cache = acu_forward(x, layer)
    g = acu_backward(np.zeros_like(y), cache, layer)
    for arr in (g.d_weights, g.d_bias, g.d_positions, g.d_input):
        assert not np.any(arr)


def test_named_fd_instance():
    # N=2, C=3, D=2, K=5, 6x6, fractional positions, loss sum(y^2)
    rep = gradcheck.check_layer(lambda r: gradcheck.acu_case(r, N=2, C=3, D=2, K=5, H=6, W=6, stride=1,
                                                             origin_fixed=True), seeds=[0, 1], tol=1e-5)
    assert rep.passed, rep.line()


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_gradients_both_backends(backend):
    from actconv import _backend
    if backend == "numba" and not _backend.HAVE_NUMBA:
        pytest.skip("numba not installed")
    rep = gradcheck.check_layer(lambda r: gradcheck.acu_case(r, backend=backend), seeds=range(6), tol=1e-5)
    assert rep.passed, rep.line()


def test_lattice_one_sided(rng):
    rep = gradcheck.check_layer(lambda r: gradcheck.acu_case(r, lattice=True), seeds=range(6), tol=1e-5,
                                one_sided=True)
    assert rep.passed, rep.line()


def test_origin_gradient_zero_when_fixed(rng):
    layer = layer_for(np.r_[[[0, 0]], rng.uniform(-1, 1, (4, 2))], rng)
    y, cache = acu_forward(rng.standard_normal((1, 2, 5, 5)), layer)
    g = acu_backward(rng.standard_normal(y.shape), cache, layer)
    assert np.all(g.d_positions[0] == 0)


def test_batch_equals_per_sample(rng):
    layer = layer_for(np.r_[[[0, 0]], rng.uniform(-1.5, 1.5, (8, 2))], rng, stride=2)
    x = rng.standard_normal((3, 2, 7, 7))
    y, _ = acu_forward(x, layer)
    for n in range(3):
        yn, _ = acu_forward(x[n:n + 1], layer)
        assert np.array_equal(yn[0], y[n])


def test_output_shape_is_fixed_at_construction(rng):
    layer = layer_for(lattice_positions(3, 3, 1), rng)
    x = rng.standard_normal((1, 2, 6, 6))
    shape = acu_forward(x, layer)[0].shape
    layer.positions.points[1:] *= 2.7
    assert acu_forward(x, layer)[0].shape == shape == (1, 3, 6, 6)


def test_far_synapse_reads_zero(rng):
    layer = AcuLayer(np.ones((1, 1, 2)), np.zeros(1), SynapsePositions([[0.0, 0.0], [0.0, 1.0]]), pad=0)
    layer.positions.points[1] = (50.0, 50.0)
    x = rng.standard_normal((1, 1, 4, 4))
    y, _ = acu_forward(x, layer)
    assert y.shape == (1, 1, 4, 3)
    assert np.array_equal(y[0, 0], x[0, 0, :, :3])


def test_shape_mismatch(rng):
    layer = layer_for(lattice_positions(3, 3, 1), rng)
    with pytest.raises(ShapeError):
        acu_forward(np.zeros((1, 3, 5, 5)), layer)
    y, cache = acu_forward(np.zeros((1, 2, 5, 5)), layer)
    with pytest.raises(ShapeError):
        acu_backward(np.zeros((1, 3, 4, 5)), cache, layer)
    with pytest.raises(ShapeError):
        AcuLayer(np.zeros((3, 2, 4)), np.zeros(3), init_positions("grid3x3"))


def test_positions_validation():
    with pytest.raises(ValueError):
        SynapsePositions([[0.5, 0.0]])
    with pytest.raises(ValueError):
        SynapsePositions([[0.0, math.nan]], origin_fixed=False)
    with pytest.raises(ValueError):
        init_positions("custom")
    with pytest.raises(ValueError):
        init_positions("hexagon")


def test_init_positions():
    g = init_positions("grid3x3")
    assert g.K == 9 and tuple(g.points[0]) == (0, 0)
    assert np.array_equal(init_positions("dilated", 2).points, lattice_positions(3, 3, 2))
    assert init_positions("custom", CROSS).K == 5


def test_param_count_adds_two_per_moving_synapse(rng):
    layer = AcuLayer.create(4, 6, rng=rng)
    assert layer.num_params() == 6 * 4 * 9 + 6 + 16
    free = AcuLayer.create(4, 6, positions=SynapsePositions(lattice_positions(3, 3, 1), origin_fixed=False), rng=rng)
    assert free.num_params() == 6 * 4 * 9 + 6 + 18


def test_he_init_and_clamp_default():
    layer = AcuLayer.create(64, 64, rng=np.random.default_rng(0), input_size=(8, 10))
    assert layer.weights.std() == pytest.approx(math.sqrt(2 / (64 * 9)), rel=0.05)
    assert layer.clamp_radius == 7


def test_normalize_examples():
    out = normalize_position_gradient([[0, 0], [3, 4], [0, 0], [-1e-3, 0]])
    assert np.allclose(out, [[0, 0], [0.6, 0.8], [0, 0], [-1, 0]], atol=1e-15)
    assert np.array_equal(normalize_position_gradient([[3.0, 4.0]], origin_fixed=True), [[0.0, 0.0]])
    assert np.allclose(normalize_position_gradient([[3.0, 4.0]], origin_fixed=False), [[0.6, 0.8]])
    assert np.array_equal(normalize_position_gradient([[0, 1e-13], [1e-13, 0]], origin_fixed=False), np.zeros((2, 2)))


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=9))
def test_normalize_unit_rows(g):
    g = np.array(g)
    out = normalize_position_gradient(g, origin_fixed=False)
    for row, orig in zip(out, g):
        n = np.hypot(*row)
        if np.hypot(*orig) >= 1e-12:
            assert abs(n - 1) < 1e-12
            assert np.dot(row, orig) > 0 and abs(row[0] * orig[1] - row[1] * orig[0]) <= 1e-12 * np.hypot(*orig)
        else:
            assert n == 0


def test_update_gate_and_step(rng):
    layer = layer_for(lattice_positions(3, 3, 1), rng)
    before = layer.positions.points.copy()
    g = np.zeros((9, 2))
    g[1:, 0] = 1.0
    apply_position_update(layer, g, 0.1, warmed_up=False)
    assert np.array_equal(layer.positions.points, before)
    apply_position_update(layer, g, 0.1, warmed_up=True)
    moved = before[:, 0] - layer.positions.points[:, 0]
    assert moved[0] == 0
    assert np.allclose(moved[1:], 0.001, rtol=0, atol=4 * np.finfo(float).eps)
    assert np.array_equal(layer.positions.points[:, 1], before[:, 1])


def test_update_clamps_exactly(rng):
    layer = layer_for(lattice_positions(3, 3, 1), rng, clamp_radius=1.0005)
    g = np.zeros((9, 2))
    g[8] = (-1.0, 0.0)  # synapse at (1, 1) moves to alpha = 1.001
    apply_position_update(layer, g, 0.1, warmed_up=True)
    assert layer.positions.points[8, 0] == 1.0005


@given(st.integers(0, 10_000))
def test_every_synapse_moves_by_step_or_zero(seed):
    r = np.random.default_rng(seed)
    layer = layer_for(np.r_[[[0, 0]], r.uniform(-2, 2, (8, 2))], r)
    raw = r.standard_normal((9, 2))
    raw[r.integers(1, 9)] = 0.0
    before = layer.positions.points.copy()
    apply_position_update(layer, normalize_position_gradient(raw), 0.1, warmed_up=True)
    d = np.hypot(*(layer.positions.points - before).T)
    for k, dk in enumerate(d):
        assert dk == 0 or abs(dk - 0.001) < 8 * np.finfo(float).eps, (k, dk)


def test_grouped_layer(rng):
    pos = [SynapsePositions(np.r_[[[0, 0]], rng.uniform(-1, 1, (4, 2))]) for _ in range(2)]
    layer = AcuLayer(rng.standard_normal((4, 2, 5)), rng.standard_normal(4), pos, pad=1)
    x = rng.standard_normal((2, 4, 6, 6))
    y, cache = acu_forward(x, layer)
    # group g equals an ungrouped layer on its channel slice
    for g in range(2):
        sub = AcuLayer(layer.weights[2 * g:2 * g + 2], layer.bias[2 * g:2 * g + 2], pos[g], pad=1)
        yg, _ = acu_forward(x[:, 2 * g:2 * g + 2], sub)
        assert np.allclose(yg, y[:, 2 * g:2 * g + 2], atol=1e-12)
    g = acu_backward(rng.standard_normal(y.shape), cache, layer)
    assert g.d_positions.shape == (2, 5, 2)
    normed = normalize_position_gradient(g.d_positions)
    apply_position_update(layer, normed, 0.1, warmed_up=True)
    assert layer.groups == 2 and layer.num_params() == 4 * 2 * 5 + 4 + 2 * 8
