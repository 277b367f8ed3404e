import numpy as np
import pytest

from tilegan.errors import ShapeError
from tilegan.tensor import (
    Rng,
    Tensor,
    avg_pool_to,
    conv2d,
    l2_distance,
    leaky_relu,
    pixel_norm,
    upsample2x,
)


def conv_oracle(x, w, b, pad):
    """Naive quadruple-loop cross-correlation in float64."""
    c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad), np.float64)
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho, wo = h + 2 * pad - (kh - 1), wd + 2 * pad - (kw - 1)
    out = np.zeros((oc, ho, wo), np.float64)
    for o in range(oc):
        for y in range(ho):
            for xx in range(wo):
                acc = 0.0
                for i in range(ic):
                    for ky in range(kh):
                        for kx in range(kw):
                            acc += float(w[o, i, ky, kx]) * float(xp[i, y + ky, xx + kx])
                out[o, y, xx] = acc + float(b[o])
    return out


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.ones((1, 3, 3), np.float32))
        k = np.zeros((1, 1, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1.0
        out = conv2d(x, k, np.zeros(1), 1)
        assert np.array_equal(out.data, x.data)

    def test_all_ones_box(self):
        x = Tensor(np.ones((1, 3, 3), np.float32))
        k = np.ones((1, 1, 3, 3), np.float32)
        out = conv2d(x, k, np.zeros(1), 1).data[0]
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], np.float32)
        assert np.array_equal(out, expected)

    def test_matches_loop_oracle(self):
        rng = Rng(101)
        x = rng.normal((4, 8, 8), std=0.25)
        w = rng.normal((6, 4, 3, 3), std=0.25)
        b = rng.normal((6,), std=0.25)
        got = conv2d(Tensor(x), w, b, 1).data
        want = conv_oracle(x, w, b, 1)
        assert got.shape == want.shape
        assert np.abs(got - want).max() <= 1e-6

    def test_output_size(self):
        x = Tensor(np.zeros((2, 7, 5), np.float32))
        k = np.zeros((3, 2, 3, 3), np.float32)
        out = conv2d(x, k, np.zeros(3), 0)
        assert out.shape == (3, 5, 3)
        out = conv2d(x, k, np.zeros(3), 2)
        assert out.shape == (3, 9, 7)

    def test_channel_mismatch(self):
        x = Tensor(np.zeros((2, 4, 4), np.float32))
        k = np.zeros((3, 5, 3, 3), np.float32)
        with pytest.raises(ShapeError):
            conv2d(x, k, np.zeros(3), 1)

    def test_even_kernel_rejected(self):
        x = Tensor(np.zeros((1, 4, 4), np.float32))
        with pytest.raises(ShapeError):
            conv2d(x, np.zeros((1, 1, 2, 2), np.float32), np.zeros(1), 1)

    def test_linearity(self):
        rng = Rng(7)
        x = rng.normal((3, 6, 6))
        y = rng.normal((3, 6, 6))
        w = rng.normal((4, 3, 3, 3))
        zb = np.zeros(4, np.float32)
        a, c = 1.7, -0.4
        lhs = conv2d(Tensor(a * x + c * y), w, zb, 1).data
        rhs = a * conv2d(Tensor(x), w, zb, 1).data + c * conv2d(Tensor(y), w, zb, 1).data
        denom = np.abs(rhs).max()
        assert np.abs(lhs - rhs).max() / denom <= 1e-5

    def test_translation_covariance_interior(self):
        rng = Rng(8)
        x = rng.normal((2, 10, 10))
        w = rng.normal((2, 2, 3, 3))
        zb = np.zeros(2, np.float32)
        shifted = np.zeros_like(x)
        shifted[:, 1:, 1:] = x[:, :-1, :-1]
        out = conv2d(Tensor(x), w, zb, 1).data
        out_s = conv2d(Tensor(shifted), w, zb, 1).data
        # interior of the shifted output, away from any padded border
        assert np.array_equal(out_s[:, 2:9, 2:9], out[:, 1:8, 1:8])

    def test_pure(self):
        rng = Rng(9)
        x = rng.normal((3, 12, 12))
        w = rng.normal((5, 3, 3, 3))
        b = rng.normal((5,))
        a1 = conv2d(Tensor(x), w, b, 1).data
        a2 = conv2d(Tensor(x), w, b, 1).data
        assert np.array_equal(a1, a2)


class TestUpsample2x:
    def test_replication(self):
        x = Tensor(np.array([[[1, 2], [3, 4]]], np.float32))
        out = upsample2x(x).data[0]
        want = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], np.float32)
        assert np.array_equal(out, want)

    def test_constant(self):
        x = Tensor(np.full((2, 3, 3), 5.0, np.float32))
        out = upsample2x(x)
        assert out.shape == (2, 6, 6)
        assert np.all(out.data == 5.0)

    def test_index_map_oracle(self):
        x = Rng(3).normal((3, 5, 7))
        out = upsample2x(Tensor(x)).data
        assert out.shape == (3, 10, 14)
        for y in range(10):
            for xx in range(14):
                assert np.array_equal(out[:, y, xx], x[:, y // 2, xx // 2])


class TestLeakyRelu:
    def test_negative(self):
        out = leaky_relu(Tensor(np.full((1, 1, 1), -1.0, np.float32)), 0.2)
        assert out.data[0, 0, 0] == np.float32(-0.2)

    def test_nonnegative_unchanged(self):
        x = np.abs(Rng(4).normal((2, 4, 4)))
        out = leaky_relu(Tensor(x), 0.2)
        assert np.array_equal(out.data, x)

    def test_elementwise_oracle(self):
        x = Rng(5).normal((3, 8, 8))
        out = leaky_relu(Tensor(x), 0.3)
        want = np.where(x >= 0, x, np.float32(0.3) * x)
        assert np.array_equal(out.data, want)

    def test_bad_slope(self):
        with pytest.raises(ValueError):
            leaky_relu(Tensor(np.zeros((1, 1, 1), np.float32)), 1.0)


class TestPixelNorm:
    def test_hand_value(self):
        x = Tensor(np.array([[[3.0]], [[4.0]]], np.float32))
        out = pixel_norm(x, 0.0)
        want = np.array([3.0, 4.0]) / np.sqrt(12.5)
        assert np.allclose(out.data[:, 0, 0], want, atol=1e-6)

    def test_zero_tensor(self):
        x = Tensor(np.zeros((4, 3, 3), np.float32))
        out = pixel_norm(x, 1e-8)
        assert np.all(out.data == 0.0)

    def test_unit_mean_square(self):
        x = Rng(6).normal((8, 5, 5)) + 0.1
        out = pixel_norm(Tensor(x), 0.0).data
        ms = np.mean(np.square(out.astype(np.float64)), axis=0)
        assert np.abs(ms - 1.0).max() <= 1e-5


class TestAvgPool:
    def test_all_ones(self):
        out = avg_pool_to(Tensor(np.ones((1, 4, 4), np.float32)), 2)
        assert out.shape == (1, 2, 2)
        assert np.all(out.data == 1.0)

    def test_mean(self):
        x = Tensor(np.array([[[1, 1], [3, 3]]], np.float32))
        out = avg_pool_to(x, 1)
        assert out.data[0, 0, 0] == 2.0

    def test_block_mean_oracle(self):
        x = Rng(12).normal((3, 512, 512))
        out = avg_pool_to(Tensor(x), 16).data
        want = np.zeros((3, 16, 16))
        bs = 512 // 16
        for i in range(16):
            for j in range(16):
                want[:, i, j] = x[:, i * bs:(i + 1) * bs, j * bs:(j + 1) * bs].mean(axis=(1, 2))
        assert np.abs(out - want).max() <= 1e-5

    def test_non_divisible(self):
        with pytest.raises(ShapeError):
            avg_pool_to(Tensor(np.zeros((1, 6, 6), np.float32)), 4)


class TestL2Distance:
    def test_equal(self):
        x = Tensor(Rng(1).normal((2, 3, 3)))
        assert l2_distance(x, x) == 0.0

    def test_three_four_five(self):
        a = Tensor(np.zeros((2, 1, 1), np.float32))
        b = Tensor(np.array([[[3.0]], [[4.0]]], np.float32))
        assert l2_distance(a, b) == pytest.approx(5.0)

    def test_loop_oracle(self):
        rng = Rng(2)
        a = rng.normal((3, 16, 16))
        b = rng.normal((3, 16, 16))
        got = l2_distance(Tensor(a), Tensor(b))
        acc = 0.0
        for v in (a.astype(np.float64) - b.astype(np.float64)).ravel():
            acc += v * v
        want = np.sqrt(acc)
        assert got == pytest.approx(want, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l2_distance(Tensor(np.zeros((1, 2, 2), np.float32)), Tensor(np.zeros((1, 3, 3), np.float32)))


class TestTensorType:
    def test_rejects_nan(self):
        bad = np.zeros((1, 2, 2), np.float32)
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Tensor(bad)

    def test_read_only(self):
        t = Tensor(np.zeros((1, 2, 2), np.float32))
        with pytest.raises(ValueError):
            t.data[0, 0, 0] = 1.0

    def test_does_not_alias_input(self):
        src = np.zeros((1, 2, 2), np.float32)
        t = Tensor(src)
        src[0, 0, 0] = 9.0
        assert t.data[0, 0, 0] == 0.0


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(1234).normal((100,))
        b = Rng(1234).normal((100,))
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).normal((50,)), Rng(2).normal((50,)))
