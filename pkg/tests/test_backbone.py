"""Encoder-decoder shapes, determinism and the logits head."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from localbins.backbone import (
    encode_decode,
    init_backbone,
    init_logits_head,
    output_logits,
    pyramid_channels,
)
from localbins.tensor import ShapeError, Tensor


def test_pyramid_resolutions_16px():
    params = init_backbone(np.random.default_rng(0), 4)
    pyr = encode_decode(Tensor(np.random.default_rng(1).normal(size=(2, 3, 16, 16))), params, 4)
    assert pyr.bottleneck.shape[2:] == (1, 1)
    assert [pyr.level(i).shape[2] for i in range(1, 5)] == [2, 4, 8, 16]
    assert pyr.channels == pyramid_channels(4)


def test_zero_input_zero_weights_give_zero_features():
    params = init_backbone(np.random.default_rng(0), 2)
    for p in params.values():
        p.data[...] = 0
    pyr = encode_decode(Tensor(np.zeros((1, 3, 8, 8))), params, 2)
    assert all(not pyr.level(i).data.any() for i in range(3))


def test_deterministic():
    params = init_backbone(np.random.default_rng(0), 3)
    x = Tensor(np.random.default_rng(2).normal(size=(1, 3, 16, 16)))
    a, b = encode_decode(x, params, 3), encode_decode(x, params, 3)
    for i in range(4):
        np.testing.assert_array_equal(a.level(i).data, b.level(i).data)


def test_indivisible_resolution():
    params = init_backbone(np.random.default_rng(0), 3)
    with pytest.raises(ShapeError):
        encode_decode(Tensor(np.zeros((1, 3, 12, 12))), params, 3)


def test_bin_count_per_seed():
    params = {}
    init_logits_head(params, np.random.default_rng(0), 16, 4 * 2**4)
    assert output_logits(Tensor(np.zeros((1, 16, 4, 4))), params, 64).shape == (1, 64, 4, 4)


def test_degenerate_bin_count():
    params = {}
    init_logits_head(params, np.random.default_rng(0), 128, 1)
    assert output_logits(Tensor(np.zeros((1, 128, 1, 1))), params, 1).shape == (1, 1, 1, 1)


def test_head_mismatch():
    params = {}
    init_logits_head(params, np.random.default_rng(0), 8, 8)
    with pytest.raises(ShapeError):
        output_logits(Tensor(np.zeros((1, 8, 2, 2))), params, 16)


@given(st.integers(1, 8), st.integers(0, 3), st.integers(1, 2))
def test_logits_shape_property(n_seed, n, batch):
    rng = np.random.default_rng(n_seed * 10 + n)
    params = init_backbone(rng, n)
    top_c = pyramid_channels(n)[-1]
    init_logits_head(params, rng, top_c, n_seed * 2**n)
    size = 2**n * 2
    pyr = encode_decode(Tensor(rng.normal(size=(batch, 3, size, size))), params, n)
    out = output_logits(pyr.level(n), params, n_seed * 2**n)
    assert out.shape == (batch, n_seed * 2**n, size, size)
