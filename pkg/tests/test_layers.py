"""Convolution, upsampling, channel softmax and the pointwise MLP."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from localbins import tensor as T
from localbins.layers import (
    _upsample_matrix,
    bilinear_upsample2x,
    conv2d,
    init_mlp,
    pointwise_mlp,
    softmax_channel,
)
from localbins.tensor import ShapeError, Tensor, finite_diff_check


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def conv_loop(x, w, b, stride, pad):
    """Direct nested-loop convolution (cross-correlation)."""
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(n):
        for o in range(co):
            for r in range(ho):
                for s in range(wo):
                    patch = xp[i, :, r * stride : r * stride + kh, s * stride : s * stride + kw]
                    out[i, o, r, s] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


def bilinear_oracle(img, oh, ow):
    """Per output pixel: half-pixel source coordinate, clamp, two-tap lerp per axis."""
    h, w = img.shape
    out = np.zeros((oh, ow))
    for r in range(oh):
        for c in range(ow):
            sy = min(max((r + 0.5) * h / oh - 0.5, 0.0), h - 1)
            sx = min(max((c + 0.5) * w / ow - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            out[r, c] = top * (1 - fy) + bot * fy
    return out


class TestConv2d:
    def test_ones_kernel_counts_neighbours(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1).data[0, 0]
        np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 3, 5, 4))
        w = np.zeros((3, 3, 1, 1))
        w[np.arange(3), np.arange(3)] = 1.0
        np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(w)).data, x)

    def test_zero_kernel(self, rng):
        out = conv2d(Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(np.zeros((3, 2, 3, 3))), padding=1)
        assert out.shape == (1, 3, 4, 4)
        assert not out.data.any()

    @pytest.mark.parametrize("stride,pad,size", [(1, 0, 5), (1, 1, 6), (2, 1, 8), (2, 1, 7), (2, 0, 5)])
    def test_matches_loop_oracle(self, rng, stride, pad, size):
        x = rng.normal(size=(2, 3, size, size))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
        np.testing.assert_allclose(got, conv_loop(x, w, b, stride, pad), atol=1e-12)

    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0)])
    def test_gradients(self, rng, stride, pad):
        x, w, b = leaf(rng.normal(size=(2, 2, 6, 6))), leaf(rng.normal(size=(3, 2, 3, 3))), leaf(rng.normal(size=3))
        wt = rng.normal(size=conv2d(x, w, b, stride, pad).shape)
        f = lambda: T.tsum(conv2d(x, w, b, stride, pad) * wt)  # noqa: E731
        assert finite_diff_check(f, [x, w, b]) < 1e-7

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


class TestUpsample:
    def test_two_by_two_against_oracle(self):
        img = np.array([[0.0, 1.0], [2.0, 3.0]])
        got = bilinear_upsample2x(Tensor(img[None, None])).data[0, 0]
        np.testing.assert_allclose(got, bilinear_oracle(img, 4, 4), atol=1e-14)
        # spot values: interior taps are 0.75/0.25 mixes
        assert got[1, 1] == pytest.approx(0.75)
        assert got[0, 0] == 0.0 and got[3, 3] == 3.0

    @pytest.mark.parametrize("h,w", [(1, 1), (3, 5), (4, 4), (7, 2)])
    def test_random_against_oracle(self, rng, h, w):
        img = rng.normal(size=(h, w))
        got = bilinear_upsample2x(Tensor(img[None, None])).data[0, 0]
        np.testing.assert_allclose(got, bilinear_oracle(img, 2 * h, 2 * w), atol=1e-12)

    def test_single_pixel_replicates(self):
        got = bilinear_upsample2x(Tensor(np.full((1, 2, 1, 1), 3.5))).data
        np.testing.assert_array_equal(got, np.full((1, 2, 2, 2), 3.5))

    def test_constant_field(self):
        got = bilinear_upsample2x(Tensor(np.full((2, 3, 4, 5), -1.25))).data
        np.testing.assert_allclose(got, -1.25, atol=1e-15)

    def test_matches_dense_matrix_form(self, rng):
        x = rng.normal(size=(2, 3, 5, 6))
        ref = _upsample_matrix(5, np.float64) @ x @ _upsample_matrix(6, np.float64).T
        np.testing.assert_allclose(bilinear_upsample2x(Tensor(x)).data, ref, atol=1e-13)

    def test_gradient(self, rng):
        x = leaf(rng.normal(size=(1, 2, 3, 4)))
        wt = rng.normal(size=(1, 2, 6, 8))
        assert finite_diff_check(lambda: T.tsum(bilinear_upsample2x(x) * wt), [x]) < 1e-8


class TestSoftmaxChannel:
    def test_uniform(self):
        p = softmax_channel(Tensor(np.zeros((1, 4, 2, 2)))).data
        np.testing.assert_allclose(p, 0.25)

    def test_saturation(self):
        p = softmax_channel(Tensor(np.array([[0.0, 800.0]]))).data
        np.testing.assert_allclose(p, [[0.0, 1.0]], atol=1e-300)

    def test_known_values(self):
        x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1)
        e = np.exp([1.0, 2.0, 3.0])
        np.testing.assert_allclose(softmax_channel(Tensor(x)).data.ravel(), e / e.sum(), atol=1e-15)
        np.testing.assert_allclose(softmax_channel(Tensor(x)).data.ravel(), [0.09003, 0.24473, 0.66524], atol=1e-5)


def _mlp(rng, c_in=4, hidden=8, c_out=3):
    params = {}
    init_mlp(params, "m", rng, c_in, hidden, c_out, np.float64)
    for p in params.values():
        p.data[...] = rng.normal(size=p.shape)
    return params


def mlp_oracle(rows, params):
    h = np.maximum(rows @ params["m.w1"].data.T + params["m.b1"].data, 0)
    h = np.maximum(h @ params["m.w2"].data.T + params["m.b2"].data, 0)
    return h @ params["m.w3"].data.T + params["m.b3"].data


class TestPointwiseMLP:
    def test_matches_matmul_oracle(self, rng):
        params = _mlp(rng)
        x = rng.normal(size=(2, 4, 3, 5))
        got = pointwise_mlp(Tensor(x), params, "m").data
        rows = x.transpose(0, 2, 3, 1).reshape(-1, 4)
        ref = mlp_oracle(rows, params).reshape(2, 3, 5, 3).transpose(0, 3, 1, 2)
        np.testing.assert_allclose(got, ref, atol=1e-12)

    def test_zero_weights_give_zero(self, rng):
        params = _mlp(rng)
        for p in params.values():
            p.data[...] = 0
        out = pointwise_mlp(Tensor(rng.normal(size=(1, 4, 2, 2))), params, "m")
        assert out.shape == (1, 3, 2, 2) and not out.data.any()

    def test_spatial_one_by_one_equals_flat(self, rng):
        params = _mlp(rng)
        v = rng.normal(size=4)
        spatial = pointwise_mlp(Tensor(v.reshape(1, 4, 1, 1)), params, "m").data.ravel()
        flat = pointwise_mlp(Tensor(v[None]), params, "m").data.ravel()
        np.testing.assert_array_equal(spatial, flat)

    def test_gradient(self, rng):
        params = _mlp(rng)
        x = leaf(rng.normal(size=(1, 4, 2, 3)))
        wt = rng.normal(size=(1, 3, 2, 3))
        f = lambda: T.tsum(pointwise_mlp(x, params, "m") * wt)  # noqa: E731
        assert finite_diff_check(f, [x, *params.values()]) < 1e-6

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            pointwise_mlp(Tensor(np.ones((2, 5))), _mlp(rng), "m")


@given(st.integers(1, 4), st.integers(1, 4), st.floats(-10, 10))
def test_upsample_preserves_constants(h, w, c):
    out = bilinear_upsample2x(Tensor(np.full((1, 1, h, w), c))).data
    np.testing.assert_allclose(out, c, atol=1e-12 * max(1.0, abs(c)))
