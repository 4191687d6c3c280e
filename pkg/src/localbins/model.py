"""Full network: backbone plus either the LocalBins head or a direct depth head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import (
    PyramidFeatures,
    encode_decode,
    init_backbone,
    init_direct_head,
    init_logits_head,
    pyramid_channels,
)
from .bins import BinState, forward_localbins, init_localbins
from .config import TrainConfig
from .layers import conv2d
from .tensor import Tensor, sigmoid


@dataclass
class ModelOutput:
    pyramid: PyramidFeatures
    states: list[BinState] | None
    depth: Tensor


def init_model(cfg: TrainConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    dtype = cfg.np_dtype
    params = init_backbone(rng, cfg.n_decoder, dtype)
    chans = pyramid_channels(cfg.n_decoder)
    if cfg.uses_localbins:
        params.update(
            init_localbins(
                rng,
                chans,
                cfg.n_seed,
                cfg.splitter_spec,
                dtype,
                embed_hidden=cfg.embed_hidden,
                seed_hidden=cfg.seed_hidden,
                split_hidden=cfg.split_hidden,
            )
        )
        init_logits_head(params, rng, chans[-1], cfg.n_bins_out, dtype)
    else:
        init_direct_head(params, rng, chans[-1], dtype)
    return params


def forward(params: dict, images, cfg: TrainConfig) -> ModelOutput:
    x = images if isinstance(images, Tensor) else Tensor(images, dtype=cfg.np_dtype)
    pyr = encode_decode(x, params, cfg.n_decoder)
    if cfg.uses_localbins:
        states, depth = forward_localbins(pyr, params, cfg.head)
        return ModelOutput(pyr, states, depth)
    top = pyr.level(pyr.n)
    raw = conv2d(top, params["head.direct.w"], params["head.direct.b"], padding=1)
    rng_ = cfg.depth_range
    depth = sigmoid(raw) * rng_.span + rng_.d_min
    return ModelOutput(pyr, None, depth)


def frozen(params: dict) -> dict:
    """Untracked views of ``params`` for inference."""
    return {k: v.detach() for k, v in params.items()}
