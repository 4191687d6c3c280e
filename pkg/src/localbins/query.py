"""Region queries: random boxes, ROI-average pooling and box responses.

A box query pools every pyramid level over the box (1x1 ROIAlign output,
``sampling x sampling`` bilinear samples) and runs the pooled vectors
through the very same embedding / seed / splitter parameters the spatial
path uses, with the pooled embeddings summed level to level in place of the
spatial upsample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from .backbone import PyramidFeatures
from .bins import BinState, embed_bins, seed_bins, split_bins
from .tensor import ShapeError, Tensor, _record

REFERENCE_BOX_SIZES = (3, 7, 15, 31, 63)
REFERENCE_EXTENT = 480


@dataclass(frozen=True)
class BoxQuery:
    x0: float
    y0: float
    x1: float
    y1: float
    size_class: int = 0

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.x1, self.y1], dtype=np.float64)


@dataclass
class QuerySet:
    """Boxes stored class-major: rows ``k*M .. (k+1)*M - 1`` have size ``sizes[k]``."""

    boxes: np.ndarray  # [K*M, 4] as x0, y0, x1, y1
    classes: np.ndarray  # [K*M]
    sizes: tuple
    m: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError(f"box sizes must be strictly increasing, got {self.sizes}")

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self) -> Iterator[BoxQuery]:
        for (x0, y0, x1, y1), k in zip(self.boxes, self.classes):
            yield BoxQuery(float(x0), float(y0), float(x1), float(y1), int(k))

    def of_class(self, k: int) -> np.ndarray:
        return self.boxes[self.classes == k]


@dataclass
class BoxResponse:
    widths: list  # one Tensor of 2**L * N_seed widths per level
    gt_depths: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def rejected(self) -> bool:
        return self.gt_depths.size == 0


@dataclass(frozen=True)
class CoverageReport:
    psci: int
    px_covered: int
    coverage_pct: float

    def csv_row(self) -> str:
        return f"{self.psci},{self.px_covered},{self.coverage_pct:.4f}"


def scale_box_sizes(sizes, extent, reference: int = REFERENCE_EXTENT) -> tuple:
    """Rescale box sizes defined at ``reference`` pixels to ``min(extent)``.

    Each size is rounded to the nearest odd integer >= 3 and then bumped so
    the ladder stays strictly increasing.
    """
    limit = min(extent)
    factor = limit / reference
    out = []
    for s in sizes:
        odd = int(math.floor((s * factor - 1) / 2 + 0.5)) * 2 + 1
        odd = max(odd, 3)
        if out and odd <= out[-1]:
            odd = out[-1] + 2
        out.append(odd)
    if out[-1] > limit:
        raise ValueError(f"scaled box sizes {out} do not fit a {extent} image")
    return tuple(out)


def generate_queries(rng: np.random.Generator, image_extent, sizes=REFERENCE_BOX_SIZES, m: int = 200) -> QuerySet:
    """``m`` uniformly placed square boxes per size, fully inside the image."""
    h, w = image_extent
    boxes, classes = [], []
    for k, s in enumerate(sizes):
        if s > min(h, w):
            raise ValueError(f"box size {s} exceeds image extent {image_extent}")
        y0 = rng.integers(0, h - s + 1, size=m)
        x0 = rng.integers(0, w - s + 1, size=m)
        boxes.append(np.stack([x0, y0, x0 + s, y0 + s], axis=1))
        classes.append(np.full(m, k))
    return QuerySet(
        boxes=np.concatenate(boxes).astype(np.float64),
        classes=np.concatenate(classes),
        sizes=tuple(sizes),
        m=m,
    )


def _axis_samples(lo, hi, stride, n_feat, sampling):
    """Bilinear taps along one axis for every box: (idx_lo, idx_hi, w_lo, w_hi), each [B, S]."""
    flo = lo[:, None] / stride
    extent = (hi - lo)[:, None] / stride
    u = flo + (np.arange(sampling)[None, :] + 0.5) * extent / sampling
    t = np.clip(u - 0.5, 0.0, n_feat - 1)
    i_lo = np.minimum(np.floor(t).astype(np.int64), n_feat - 1)
    i_hi = np.minimum(i_lo + 1, n_feat - 1)
    frac = t - i_lo
    return i_lo, i_hi, 1.0 - frac, frac


def roi_weight_matrix(boxes, batch_idx, feat_shape, image_extent, sampling: int = 2) -> sp.csr_matrix:
    """Sparse [B, N*Hf*Wf] matrix whose rows average the bilinear samples of each box."""
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    batch_idx = np.asarray(batch_idx, dtype=np.int64).reshape(-1)
    n, _, hf, wf = feat_shape
    h, w = image_extent
    if (boxes[:, 0] < 0).any() or (boxes[:, 1] < 0).any() or (boxes[:, 2] > w).any() or (boxes[:, 3] > h).any():
        raise ValueError("box outside image")
    if (boxes[:, 2] <= boxes[:, 0]).any() or (boxes[:, 3] <= boxes[:, 1]).any():
        raise ValueError("empty box")
    sy, sx = h / hf, w / wf
    yl, yh, wyl, wyh = _axis_samples(boxes[:, 1], boxes[:, 3], sy, hf, sampling)
    xl, xh, wxl, wxh = _axis_samples(boxes[:, 0], boxes[:, 2], sx, wf, sampling)
    b = len(boxes)
    base = (batch_idx * hf * wf)[:, None, None]
    rows, cols, vals = [], [], []
    for yi, wy in ((yl, wyl), (yh, wyh)):
        for xi, wx in ((xl, wxl), (xh, wxh)):
            c = base + yi[:, :, None] * wf + xi[:, None, :]
            v = wy[:, :, None] * wx[:, None, :] / (sampling * sampling)
            rows.append(np.broadcast_to(np.arange(b)[:, None, None], c.shape).ravel())
            cols.append(c.ravel())
            vals.append(v.ravel())
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(b, n * hf * wf)
    )
    return mat.tocsr()


def roi_pool(feat: Tensor, boxes, batch_idx, image_extent, sampling: int = 2) -> Tensor:
    """Average-pool ``feat`` [N, C, Hf, Wf] over each box -> [B, C]."""
    if feat.ndim != 4:
        raise ShapeError("roi_pool expects [N, C, H, W] features")
    n, c, hf, wf = feat.shape
    mat = roi_weight_matrix(boxes, batch_idx, feat.shape, image_extent, sampling).astype(feat.dtype)
    rows = feat.data.transpose(0, 2, 3, 1).reshape(n * hf * wf, c)
    out = np.asarray(mat @ rows)

    def bw(g):
        grows = np.asarray(mat.T @ g)
        return (np.ascontiguousarray(grows.reshape(n, hf, wf, c).transpose(0, 3, 1, 2)),)

    return _record(out, (feat,), bw, "roi_pool")


def roi_avg_pool(feat: Tensor, box: BoxQuery, image_extent, batch_index: int = 0, sampling: int = 2) -> Tensor:
    """Pooled feature vector [C] for a single box."""
    pooled = roi_pool(feat, box.as_array()[None], [batch_index], image_extent, sampling)
    return pooled.reshape(pooled.shape[1])


def query_states(pyr: PyramidFeatures, params: dict, boxes, batch_idx, image_extent, cfg) -> list[BinState]:
    """Flat BinStates ([B, 2**L * N_seed] widths) for a batch of boxes, one per level."""
    pooled = [roi_pool(pyr.level(i), boxes, batch_idx, image_extent) for i in range(pyr.n + 1)]
    state = seed_bins(embed_bins(pooled[0], params, 0), params, cfg.n_seed, cfg.seed_eps)
    states = [state]
    for k in range(1, pyr.n + 1):
        state = split_bins(state, embed_bins(pooled[k], params, k), params, cfg.splitter)
        states.append(state)
    return states


def query_bins(pyr: PyramidFeatures, params: dict, box: BoxQuery, cfg, image_extent, batch_index: int = 0) -> BoxResponse:
    states = query_states(pyr, params, box.as_array()[None], [batch_index], image_extent, cfg)
    return BoxResponse(widths=[s.widths.reshape(s.widths.shape[1]) for s in states])


def extract_gt_depths(depth, mask, box: BoxQuery, cap: int = 512, rng: np.random.Generator | None = None) -> np.ndarray:
    """Valid ground-truth depths whose pixel centers fall in ``box``.

    More than ``cap`` values are uniformly subsampled (without replacement).
    An empty result means the box is rejected.
    """
    depth = np.asarray(depth).reshape(np.asarray(depth).shape[-2:])
    mask = np.asarray(mask, dtype=bool).reshape(depth.shape)
    # pixel (r, c) has its center at (r + 0.5, c + 0.5)
    r0 = max(int(math.ceil(box.y0 - 0.5)), 0)
    r1 = min(int(math.ceil(box.y1 - 0.5)), depth.shape[0])
    c0 = max(int(math.ceil(box.x0 - 0.5)), 0)
    c1 = min(int(math.ceil(box.x1 - 0.5)), depth.shape[1])
    vals = depth[r0:r1, c0:c1][mask[r0:r1, c0:c1]].astype(np.float64)
    if vals.size > cap:
        rng = rng if rng is not None else np.random.default_rng(0)
        keep = np.sort(rng.choice(vals.size, size=cap, replace=False))
        vals = vals[keep]
    return vals


def coverage_report(query_set, image_extent) -> CoverageReport:
    """PSCI (number of boxes) and the union of pixels they cover."""
    h, w = image_extent
    canvas = np.zeros((h, w), dtype=bool)
    boxes = query_set.boxes if isinstance(query_set, QuerySet) else np.asarray([b.as_array() for b in query_set])
    for x0, y0, x1, y1 in np.asarray(boxes, dtype=np.int64).reshape(-1, 4):
        canvas[y0:y1, x0:x1] = True
    px = int(canvas.sum())
    return CoverageReport(psci=len(boxes), px_covered=px, coverage_pct=100.0 * px / (h * w))


def sample_locations(rng: np.random.Generator, mask, n_locations: int) -> np.ndarray:
    """Distinct valid pixel locations [n, 2] as (row, col)."""
    valid = np.flatnonzero(np.asarray(mask, dtype=bool).ravel())
    if valid.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    pick = rng.choice(valid, size=min(n_locations, valid.size), replace=False)
    w = np.asarray(mask).shape[-1]
    return np.stack([pick // w, pick % w], axis=1)


def window_depths(depth, mask, row: int, col: int, window: int) -> np.ndarray:
    """Valid depths of the ``window``-sized square centered on (row, col), clipped at borders."""
    depth = np.asarray(depth).reshape(np.asarray(depth).shape[-2:])
    mask = np.asarray(mask, dtype=bool).reshape(depth.shape)
    half = window // 2
    r0, r1 = max(row - half, 0), min(row + half + 1, depth.shape[0])
    c0, c1 = max(col - half, 0), min(col + half + 1, depth.shape[1])
    return depth[r0:r1, c0:c1][mask[r0:r1, c0:c1]].astype(np.float64)


def naive_subsample_targets(depth, mask, window: int, n_locations: int, rng: np.random.Generator) -> list:
    """Baseline supervision targets: (pixel, depths of the centered window) pairs."""
    if window % 2 != 1:
        raise ValueError("window must be odd")
    depth = np.asarray(depth).reshape(np.asarray(depth).shape[-2:])
    mask = np.asarray(mask, dtype=bool).reshape(depth.shape)
    locs = sample_locations(rng, mask, n_locations)
    return [((int(r), int(c)), window_depths(depth, mask, int(r), int(c), window)) for r, c in locs]


def naive_coverage(n_locations: int, image_extent, rng: np.random.Generator) -> CoverageReport:
    """Coverage of the naive scheme: one supervised pixel per sampled location."""
    h, w = image_extent
    locs = sample_locations(rng, np.ones((h, w), dtype=bool), n_locations)
    px = len(np.unique(locs[:, 0] * w + locs[:, 1]))
    return CoverageReport(psci=n_locations, px_covered=px, coverage_pct=100.0 * px / (h * w))
