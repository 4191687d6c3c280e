"""Toy encoder-decoder with skip connections.

Encoder: ``n`` stride-2 3x3 conv stages (16, 32, 64, 128, 128, ... channels)
followed by a 3x3 bottleneck conv to 128 channels at ``H / 2**n``. Decoder
level ``i`` (1..n) upsamples the previous level, concatenates the encoder
skip at the matching resolution (the input image at full resolution) and
applies a 3x3 conv + ReLU.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import bias_uniform, bilinear_upsample2x, conv2d, kaiming_uniform
from .tensor import ShapeError, Tensor, concat, relu

ENCODER_CHANNELS = (16, 32, 64, 128)
BOTTLENECK_CHANNELS = 128


@dataclass
class PyramidFeatures:
    bottleneck: Tensor
    decoder_feats: list
    n: int

    def level(self, i: int) -> Tensor:
        """Feature map feeding LocalBins layer ``i`` (0 = bottleneck)."""
        return self.bottleneck if i == 0 else self.decoder_feats[i - 1]

    @property
    def channels(self) -> list[int]:
        return [self.level(i).shape[1] for i in range(self.n + 1)]


def encoder_channels(n: int) -> list[int]:
    return [ENCODER_CHANNELS[min(j, len(ENCODER_CHANNELS) - 1)] for j in range(n)]


def decoder_channels(n: int) -> list[int]:
    enc = [3] + encoder_channels(n)
    # level i pairs with encoder stage n - i
    return [max(16, enc[n - i]) for i in range(1, n + 1)]


def pyramid_channels(n: int) -> list[int]:
    return [BOTTLENECK_CHANNELS] + decoder_channels(n)


def _conv_param(params, name, rng, c_out, c_in, k, dtype):
    params[f"{name}.w"] = kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k, dtype)
    params[f"{name}.b"] = bias_uniform(rng, c_out, c_in * k * k, dtype)


def init_backbone(rng: np.random.Generator, n: int, dtype=np.float64) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    enc = [3] + encoder_channels(n)
    for j in range(1, n + 1):
        _conv_param(params, f"backbone.enc{j}", rng, enc[j], enc[j - 1], 3, dtype)
    _conv_param(params, "backbone.bottleneck", rng, BOTTLENECK_CHANNELS, enc[n], 3, dtype)
    prev = BOTTLENECK_CHANNELS
    for i, c_out in enumerate(decoder_channels(n), start=1):
        _conv_param(params, f"backbone.dec{i}", rng, c_out, prev + enc[n - i], 3, dtype)
        prev = c_out
    return params


def encode_decode(image: Tensor, params: dict, n: int) -> PyramidFeatures:
    h, w = image.shape[2:]
    if h % (2**n) or w % (2**n):
        raise ShapeError(f"image {h}x{w} not divisible by 2**{n}")
    skips = [image]
    x = image
    for j in range(1, n + 1):
        x = relu(conv2d(x, params[f"backbone.enc{j}.w"], params[f"backbone.enc{j}.b"], stride=2, padding=1))
        skips.append(x)
    x = relu(conv2d(x, params["backbone.bottleneck.w"], params["backbone.bottleneck.b"], padding=1))
    bottleneck = x
    feats = []
    for i in range(1, n + 1):
        up = bilinear_upsample2x(x)
        x = concat([up, skips[n - i]], axis=1)
        x = relu(conv2d(x, params[f"backbone.dec{i}.w"], params[f"backbone.dec{i}.b"], padding=1))
        feats.append(x)
    return PyramidFeatures(bottleneck=bottleneck, decoder_feats=feats, n=n)


def init_logits_head(params: dict, rng: np.random.Generator, c_in: int, n_bins_out: int, dtype=np.float64) -> None:
    _conv_param(params, "head.logits", rng, n_bins_out, c_in, 3, dtype)


def output_logits(top: Tensor, params: dict, n_bins_out: int) -> Tensor:
    """Per-pixel bin logits, one channel per output bin."""
    w = params["head.logits.w"]
    if w.shape[0] != n_bins_out:
        raise ShapeError(
            f"head.logits has {w.shape[0]} output channels but {n_bins_out} bins were configured"
        )
    return conv2d(top, w, params["head.logits.b"], padding=1)


def init_direct_head(params: dict, rng: np.random.Generator, c_in: int, dtype=np.float64) -> None:
    _conv_param(params, "head.direct", rng, 1, c_in, 3, dtype)
