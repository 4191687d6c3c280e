"""Per-pixel adaptive bins: embedding, seed widths, splitting, regression.

Widths live on axis 1 of either spatial maps [N, m, H, W] or flat batches
[B, m] (the region-query path); every function here accepts both layouts.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .backbone import PyramidFeatures, output_logits
from .layers import bilinear_upsample2x, init_mlp, pointwise_mlp, softmax_channel
from .tensor import ShapeError, Tensor, cumsum, normalize, relu, sigmoid, stack_pairs, tsum

EMBED_DIM = 128
# split fractions are squeezed into [ALPHA_FLOOR, 1 - ALPHA_FLOOR]; a dead ReLU pair gives
# alpha = 0, and four such splits in a row must still leave widths that float64 centers resolve
ALPHA_FLOOR = 1e-2


class SplitterKind(str, Enum):
    CONSTANT = "constant"
    SIGMOID = "sigmoid"
    LINEAR_NORM = "linear_norm"


@dataclass(frozen=True)
class Splitter:
    kind: SplitterKind = SplitterKind.LINEAR_NORM
    epsilon: float = 1e-4

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", SplitterKind(self.kind))
        except ValueError:
            raise ValueError(f"unknown splitter {self.kind!r}; choose from {[k.value for k in SplitterKind]}") from None
        if self.epsilon <= 0:
            raise ValueError("splitter epsilon must be positive")

    def outputs_per_bin(self) -> int:
        return {SplitterKind.CONSTANT: 0, SplitterKind.SIGMOID: 1, SplitterKind.LINEAR_NORM: 2}[self.kind]


@dataclass(frozen=True)
class DepthRange:
    d_min: float = 1e-3
    d_max: float = 10.0

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got ({self.d_min}, {self.d_max})")

    @property
    def span(self) -> float:
        return self.d_max - self.d_min


@dataclass(frozen=True)
class HeadConfig:
    n_seed: int = 4
    splitter: Splitter = Splitter()
    depth_range: DepthRange = DepthRange()
    seed_eps: float = 1e-3


@dataclass
class BinState:
    widths: Tensor
    embedding: Tensor
    level: int

    @property
    def n_bins(self) -> int:
        return self.widths.shape[1]


def init_localbins(
    rng: np.random.Generator,
    in_channels: list[int],
    n_seed: int,
    splitter: Splitter,
    dtype=np.float64,
    embed_hidden: int = 128,
    seed_hidden: int = 256,
    split_hidden: int = 128,
) -> dict[str, Tensor]:
    """Parameters for one embedding MLP per input layer, the seed MLP and
    ``len(in_channels) - 1`` splitter MLPs."""
    if n_seed < 1:
        raise ValueError("n_seed must be >= 1")
    params: dict[str, Tensor] = {}
    for layer, c in enumerate(in_channels):
        init_mlp(params, f"lb.embed{layer}", rng, c, embed_hidden, EMBED_DIM, dtype)
    init_mlp(params, "lb.seed", rng, EMBED_DIM, seed_hidden, n_seed, dtype)
    per_bin = splitter.outputs_per_bin()
    if per_bin:
        for k in range(1, len(in_channels)):
            m = n_seed * 2 ** (k - 1)
            init_mlp(params, f"lb.split{k}", rng, EMBED_DIM, split_hidden, per_bin * m, dtype)
    return params


def embed_bins(feat: Tensor, params: dict, layer: int) -> Tensor:
    if f"lb.embed{layer}.w1" not in params:
        raise KeyError(f"no bin embedding MLP for layer {layer}")
    return pointwise_mlp(feat, params, f"lb.embed{layer}")


def seed_bins(embedding: Tensor, params: dict, n_seed: int, seed_eps: float = 1e-3) -> BinState:
    raw = pointwise_mlp(embedding, params, "lb.seed")
    if raw.shape[1] != n_seed:
        raise ShapeError(f"seed MLP emits {raw.shape[1]} bins, expected {n_seed}")
    widths = normalize(relu(raw) + seed_eps, axis=1)
    return BinState(widths=widths, embedding=embedding, level=0)


def splitter_activation(splitter: Splitter, mlp_out: Tensor | None, like: Tensor) -> Tensor:
    """Split fractions alpha in (0, 1), shaped like the widths ``like``."""
    if splitter.kind is SplitterKind.CONSTANT:
        return Tensor(np.full(like.shape, 0.5, dtype=like.dtype))
    if splitter.kind is SplitterKind.SIGMOID:
        return sigmoid(mlp_out)
    pos = relu(mlp_out)
    x1 = pos[:, 0::2]
    x2 = pos[:, 1::2]
    return x1 / (x1 + x2 + splitter.epsilon)


def split_widths(widths: Tensor, alpha: Tensor) -> Tensor:
    """Replace each width b with the adjacent pair (alpha*b, (1-alpha)*b)."""
    return stack_pairs(alpha * widths, (1.0 - alpha) * widths)


def split_bins(prev: BinState, cur_embedding: Tensor, params: dict, splitter: Splitter) -> BinState:
    """Refine ``prev`` to the next level.

    For spatial states the previous embedding and widths are first upsampled
    2x (widths renormalised); flat query states are used as they are.
    """
    k = prev.level + 1
    if f"lb.embed{k}.w1" not in params:
        raise ValueError(f"level {k} exceeds the configured number of decoder levels")
    if prev.widths.ndim == 4:
        ph, pw = prev.widths.shape[2:]
        if cur_embedding.shape[2:] != (2 * ph, 2 * pw):
            raise ShapeError(
                f"level {k} resolution {cur_embedding.shape[2:]} is not twice level {prev.level} ({ph}, {pw})"
            )
        emb_prev = bilinear_upsample2x(prev.embedding)
        widths = normalize(bilinear_upsample2x(prev.widths), axis=1)
    else:
        emb_prev = prev.embedding
        widths = prev.widths
    emb = emb_prev + cur_embedding
    mlp_out = None
    if splitter.kind is not SplitterKind.CONSTANT:
        mlp_out = pointwise_mlp(emb, params, f"lb.split{k}")
    alpha = splitter_activation(splitter, mlp_out, widths)
    if splitter.kind is not SplitterKind.CONSTANT:
        # affine rather than a clip so the gradient never vanishes at the bounds
        alpha = alpha * (1.0 - 2 * ALPHA_FLOOR) + ALPHA_FLOOR
    return BinState(widths=split_widths(widths, alpha), embedding=emb, level=k)


def _interval(depth_range) -> tuple[float, float]:
    # plain (lo, hi) pairs are accepted for pure arithmetic uses such as lo = 0
    if isinstance(depth_range, DepthRange):
        return depth_range.d_min, depth_range.d_max
    lo, hi = (float(v) for v in depth_range)
    if not lo < hi:
        raise ValueError(f"empty depth interval ({lo}, {hi})")
    return lo, hi


def bin_centers(widths, depth_range, axis: int = 1) -> Tensor:
    """Bin centers from normalised widths along ``axis``.

    ``depth_range`` is a :class:`DepthRange` or a ``(lo, hi)`` pair.
    """
    lo, hi = _interval(depth_range)
    widths = widths if isinstance(widths, Tensor) else Tensor(widths)
    sums = widths.data.sum(axis=axis)
    # rounding in a sum of m widths grows with m and the working precision
    tol = max(1e-6, widths.shape[axis] * float(np.finfo(widths.dtype).eps))
    if np.abs(sums - 1.0).max() > tol:
        raise ValueError(f"widths are not normalised (max deviation {np.abs(sums - 1.0).max():.3g})")
    edges = cumsum(widths, axis=axis) - widths * 0.5
    return edges * (hi - lo) + lo


def hybrid_regress(widths, logits: Tensor, depth_range) -> Tensor:
    """Depth as the softmax(logits)-weighted sum of bin centers, [N, 1, H, W]."""
    if isinstance(widths, BinState):
        widths = widths.widths
    if widths.shape != logits.shape:
        raise ShapeError(f"widths {widths.shape} vs logits {logits.shape}")
    centers = bin_centers(widths, depth_range)
    probs = softmax_channel(logits)
    return tsum(centers * probs, axis=1, keepdims=True)


def forward_localbins(pyr: PyramidFeatures, params: dict, cfg: HeadConfig) -> tuple[list[BinState], Tensor]:
    """Run the whole bins head; returns the BinState of every level and depth."""
    if cfg.n_seed < 1:
        raise ValueError("n_seed must be >= 1")
    state = seed_bins(embed_bins(pyr.bottleneck, params, 0), params, cfg.n_seed, cfg.seed_eps)
    states = [state]
    for k in range(1, pyr.n + 1):
        state = split_bins(state, embed_bins(pyr.level(k), params, k), params, cfg.splitter)
        states.append(state)
    logits = output_logits(pyr.level(pyr.n), params, cfg.n_seed * 2**pyr.n)
    depth = hybrid_regress(state.widths, logits, cfg.depth_range)
    return states, depth
