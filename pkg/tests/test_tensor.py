import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfvt.tensor import (
    Precision,
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    conv2d,
    extract_patches,
    gelu,
    layer_norm,
    matmul,
    mul,
    narrow,
    no_grad,
    parameter,
    relu,
    reshape,
    scale,
    softmax,
    tensor,
    transpose2d,
    tsum,
)


def test_precision_modes():
    assert Precision.TRAIN.dtype == np.float32
    assert Precision.CHECK.dtype == np.float64


class TestMatmul:
    def test_identity(self):
        a = tensor(np.arange(9, dtype=np.float64).reshape(3, 3), np.float64)
        eye = tensor(np.eye(3), np.float64)
        assert np.array_equal(matmul(eye, a).data, a.data)

    def test_zero(self):
        a = tensor([[1.0, 2.0], [3.0, 4.0]], np.float64)
        z = tensor([[0.0], [0.0]], np.float64)
        assert np.array_equal(matmul(a, z).data, [[0.0], [0.0]])

    def test_shape_mismatch_names_both_shapes(self):
        a, b = tensor(np.zeros((2, 3))), tensor(np.zeros((4, 2)))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            matmul(a, b)

    def test_rejects_vectors(self):
        with pytest.raises(ShapeError):
            matmul(tensor(np.zeros(3)), tensor(np.zeros((3, 2))))


class TestConv2d:
    def test_1x1_kernel_scales(self):
        rng = np.random.default_rng(0)
        x = tensor(rng.random((1, 5, 5)), np.float64)
        w = tensor(np.full((1, 1, 1, 1), 2.5), np.float64)
        out = conv2d(x, w)
        assert np.allclose(out.data, 2.5 * x.data)

    def test_zero_kernel(self):
        x = tensor(np.random.default_rng(1).random((2, 4, 4)), np.float64)
        w = tensor(np.zeros((3, 2, 2, 2)), np.float64)
        assert not conv2d(x, w).data.any()

    def test_output_geometry(self):
        x = tensor(np.zeros((3, 8, 8)))
        w = tensor(np.zeros((4, 3, 3, 3)))
        assert conv2d(x, w, stride=1).shape == (4, 6, 6)
        assert conv2d(x, w, stride=2).shape == (4, 3, 3)

    def test_matches_direct_cross_correlation(self):
        # independent oracle: quadruple loop, no kernel flip
        rng = np.random.default_rng(2)
        x = rng.random((2, 6, 5))
        w = rng.random((3, 2, 3, 2))
        out = conv2d(tensor(x, np.float64), tensor(w, np.float64), stride=2).data
        ho, wo = (6 - 3) // 2 + 1, (5 - 2) // 2 + 1
        expect = np.zeros((3, ho, wo))
        for co in range(3):
            for i in range(ho):
                for j in range(wo):
                    patch = x[:, 2 * i : 2 * i + 3, 2 * j : 2 * j + 2]
                    expect[co, i, j] = (patch * w[co]).sum()
        assert np.allclose(out, expect, atol=1e-12)

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError, match="larger than input"):
            conv2d(tensor(np.zeros((1, 2, 2))), tensor(np.zeros((1, 1, 3, 3))))

    def test_bias_per_channel(self):
        x = tensor(np.zeros((1, 3, 3)), np.float64)
        w = tensor(np.zeros((2, 1, 2, 2)), np.float64)
        b = tensor([1.0, -2.0], np.float64)
        out = conv2d(x, w, bias=b).data
        assert np.allclose(out[0], 1.0) and np.allclose(out[1], -2.0)


class TestLayerNorm:
    def test_constant_row_zeroed_by_eps(self):
        x = tensor(np.full((1, 6), 3.7), np.float64)
        g, b = tensor(np.ones(6), np.float64), tensor(np.zeros(6), np.float64)
        assert np.allclose(layer_norm(x, g, b).data, 0.0)

    def test_two_point_symmetry(self):
        x = tensor([[1.0, 3.0]], np.float64)
        g, b = tensor(np.ones(2), np.float64), tensor(np.zeros(2), np.float64)
        assert np.allclose(layer_norm(x, g, b).data, [[-1.0, 1.0]], atol=1e-4)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(tensor(np.zeros((2, 4))), tensor(np.zeros(3)), tensor(np.zeros(3)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_pre_affine_rows_standardized(self, seed):
        rng = np.random.default_rng(seed)
        x = tensor(rng.normal(0, 3.0, (4, 16)), np.float64)
        g, b = tensor(np.ones(16), np.float64), tensor(np.zeros(16), np.float64)
        out = layer_norm(x, g, b).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-6
        assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-3


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(softmax(tensor([0.0, 0.0, 0.0], np.float64)).data, 1 / 3)

    def test_analytic_two_thirds(self):
        out = softmax(tensor([math.log(2.0), 0.0], np.float64)).data
        assert np.allclose(out, [2 / 3, 1 / 3], atol=1e-12)

    def test_large_logits_no_overflow(self):
        out = softmax(tensor([1000.0, 0.0], np.float64)).data
        assert np.all(np.isfinite(out))
        assert out[0] > 1 - 1e-12 and out[1] < 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rows_sum_to_one_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        out = softmax(tensor(rng.normal(0, 10, (5, 7)), np.float64)).data
        assert np.abs(out.sum(axis=-1) - 1.0).max() < 1e-6
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestGelu:
    def test_zero(self):
        assert gelu(tensor([0.0], np.float64)).data[0] == 0.0

    def test_asymptote(self):
        x = tensor([6.0, 10.0], np.float64)
        assert np.allclose(gelu(x).data, x.data, atol=1e-4)

    def test_negative_asymptote(self):
        assert abs(gelu(tensor([-10.0], np.float64)).data[0]) < 1e-6


class TestBackward:
    def test_sum_gives_ones(self):
        p = parameter(np.arange(6, dtype=np.float64).reshape(2, 3))
        backward(tsum(p))
        assert np.array_equal(p.grad, np.ones((2, 3)))

    def test_sum_of_squares(self):
        p = parameter(np.array([1.0, 2.0]))
        backward(tsum(mul(p, p)))
        assert np.allclose(p.grad, [2.0, 4.0])

    def test_repeated_backward_accumulates(self):
        p = parameter(np.array([1.0, 2.0]))
        loss = tsum(mul(p, p))
        backward(loss)
        backward(loss)
        assert np.allclose(p.grad, [4.0, 8.0])

    def test_non_scalar_loss_rejected(self):
        p = parameter(np.ones((2, 2)))
        with pytest.raises(ShapeError, match="scalar"):
            backward(add(p, p))

    def test_grad_reaches_both_matmul_sides(self):
        a = parameter(np.array([[1.0, 2.0]]))
        b = parameter(np.array([[3.0], [4.0]]))
        backward(tsum(matmul(a, b)))
        assert np.allclose(a.grad, [[3.0, 4.0]])
        assert np.allclose(b.grad, [[1.0], [2.0]])

    def test_diamond_graph_accumulates_once_per_path(self):
        p = parameter(np.array([3.0]))
        y = add(p, p)  # dy/dp = 2
        backward(tsum(mul(y, y)))  # d/dp (2p)^2 = 8p
        assert np.allclose(p.grad, [24.0])


class TestStructuralOps:
    def test_add_row_bias_broadcast(self):
        x = tensor(np.zeros((3, 2)), np.float64)
        b = tensor([1.0, 2.0], np.float64)
        assert np.array_equal(add(x, b).data, np.tile([1.0, 2.0], (3, 1)))

    def test_add_rejects_general_broadcast(self):
        with pytest.raises(ShapeError):
            add(tensor(np.zeros((3, 2))), tensor(np.zeros((3, 1))))

    def test_narrow_and_concat_roundtrip(self):
        x = tensor(np.arange(12, dtype=np.float64).reshape(4, 3), np.float64)
        top, bottom = narrow(x, 0, 0, 2), narrow(x, 0, 2, 2)
        assert np.array_equal(concat([top, bottom], axis=0).data, x.data)

    def test_narrow_out_of_range(self):
        with pytest.raises(ShapeError):
            narrow(tensor(np.zeros((4, 3))), 0, 3, 2)

    def test_reshape_size_mismatch(self):
        with pytest.raises(ShapeError):
            reshape(tensor(np.zeros((2, 3))), (7,))

    def test_transpose(self):
        x = tensor(np.arange(6, dtype=np.float64).reshape(2, 3), np.float64)
        assert np.array_equal(transpose2d(x).data, x.data.T)

    def test_scale_and_relu(self):
        x = tensor([-2.0, 3.0], np.float64)
        assert np.array_equal(scale(x, -1.0).data, [2.0, -3.0])
        assert np.array_equal(relu(x).data, [0.0, 3.0])

    def test_extract_patches_row_major_order(self):
        # 1x4x4 image, p=2 -> 4 tokens ordered over the patch grid
        img = tensor(np.arange(16, dtype=np.float64).reshape(1, 4, 4), np.float64)
        patches = extract_patches(img, 2).data
        assert patches.shape == (4, 4)
        assert np.array_equal(patches[0], [0, 1, 4, 5])
        assert np.array_equal(patches[1], [2, 3, 6, 7])
        assert np.array_equal(patches[2], [8, 9, 12, 13])

    def test_extract_patches_indivisible(self):
        with pytest.raises(ShapeError, match="not divisible"):
            extract_patches(tensor(np.zeros((1, 5, 4))), 2)


def test_no_grad_builds_no_graph():
    p = parameter(np.ones(3))
    with no_grad():
        out = tsum(mul(p, p))
    assert not out.requires_grad
    backward(out)  # no-op
    assert p.grad is None


def test_graph_evaluation_deterministic():
    def build(seed):
        rng = np.random.default_rng(seed)
        a = tensor(rng.normal(size=(8, 8)), np.float32)
        b = tensor(rng.normal(size=(8, 8)), np.float32)
        return softmax(matmul(gelu(a), b)).data

    first, second = build(7), build(7)
    assert np.array_equal(first, second)


def test_tensor_invariant_size_matches_shape():
    t = tensor(np.zeros((3, 4, 5)))
    assert t.size == 60 and math.prod(t.shape) == t.size
