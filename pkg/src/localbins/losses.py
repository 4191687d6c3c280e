"""Training objectives: scale-invariant pixel loss, 1-D Chamfer, foveated bins loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bins import DepthRange, bin_centers
from .tensor import ShapeError, Tensor, _record, as_tensor, getitem, log, mean, relu, sqrt, tsum


# "sum": squared distances summed over both point sets and over boxes.
# "mean": each direction averaged over its points, boxes averaged.
CHAMFER_REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.02
    gamma_l: float = 0.3
    gamma_b: float = 0.3
    si_lambda: float = 0.85
    si_alpha: float = 10.0
    chamfer_reduction: str = "sum"

    def __post_init__(self):
        if self.chamfer_reduction not in CHAMFER_REDUCTIONS:
            raise ValueError(f"chamfer_reduction must be one of {CHAMFER_REDUCTIONS}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not (0 < self.gamma_l <= 1 and 0 < self.gamma_b <= 1):
            raise ValueError("gamma_l and gamma_b must lie in (0, 1]")


def silog_loss(pred: Tensor, gt, mask, si_lambda: float = 0.85, si_alpha: float = 10.0) -> Tensor:
    """``alpha * sqrt(mean(g^2) - lambda * mean(g)^2)`` with ``g = log pred - log gt`` on valid pixels."""
    gt = np.asarray(gt)
    mask = np.asarray(mask, dtype=bool)
    if gt.shape != pred.shape or mask.shape != pred.shape:
        raise ShapeError(f"silog: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    if not mask.any():
        raise ValueError("silog: no valid pixels")
    if (pred.data[mask] <= 0).any():
        raise ValueError("silog: non-positive prediction under mask")
    g = log(getitem(pred, mask)) - np.log(gt[mask]).astype(pred.dtype)
    mg = mean(g)
    var = mean(g * g) - (mg * mg) * si_lambda
    # rounding can push a zero variance slightly negative
    return sqrt(relu(var)) * si_alpha


def chamfer_brute(a, b) -> float:
    """O(|a||b|) bidirectional squared Chamfer distance (reference)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    d = (a[:, None] - b[None, :]) ** 2
    return float(d.min(axis=1).sum() + d.min(axis=0).sum())


def _nearest_sorted(sorted_vals: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index into ``sorted_vals`` of the nearest element to each query."""
    idx = np.searchsorted(sorted_vals, queries)
    lo = np.clip(idx - 1, 0, len(sorted_vals) - 1)
    hi = np.clip(idx, 0, len(sorted_vals) - 1)
    take_hi = np.abs(sorted_vals[hi] - queries) < np.abs(queries - sorted_vals[lo])
    return np.where(take_hi, hi, lo)


def chamfer_1d(a, b) -> Tensor:
    """Bidirectional squared Chamfer distance between 1-D sets, differentiable in ``a``.

    Uses sort + binary search; equals :func:`chamfer_brute` exactly up to
    summation order.
    """
    if np.size(a.data if isinstance(a, Tensor) else a) == 0 or np.size(b) == 0:
        raise ValueError("chamfer_1d needs nonempty sets")
    a = as_tensor(a)
    av = a.data.reshape(-1)
    bv = np.asarray(b, dtype=a.dtype).reshape(-1)
    b_sorted = np.sort(bv)
    nb = b_sorted[_nearest_sorted(b_sorted, av)]
    order = np.argsort(av, kind="stable")
    na_idx = order[_nearest_sorted(av[order], bv)]
    diff_a = av - nb
    diff_b = av[na_idx] - bv
    out = np.asarray(np.sum(diff_a * diff_a) + np.sum(diff_b * diff_b), dtype=a.dtype)

    def bw(g):
        grad = 2.0 * diff_a
        np.add.at(grad, na_idx, 2.0 * diff_b)
        return ((g * grad).reshape(a.shape),)

    return _record(out, (a,), bw, "chamfer_1d")


def chamfer_batch(points: Tensor, targets: list, chunk_elems: int = 4_000_000, reduction: str = "sum") -> Tensor:
    """Per-row Chamfer distances between ``points`` [B, m] and ragged ``targets``.

    Targets are padded and compared exhaustively, so each row equals the
    brute-force value. ``reduction="mean"`` averages each direction over its
    points instead of summing.
    """
    bsz, m = points.shape
    if len(targets) != bsz:
        raise ShapeError(f"{len(targets)} target sets for {bsz} point sets")
    lens = np.array([len(t) for t in targets])
    if (lens == 0).any():
        raise ValueError("chamfer_batch: empty target set")
    width = int(lens.max())
    tgt = np.zeros((bsz, width), dtype=points.dtype)
    valid = np.arange(width)[None, :] < lens[:, None]
    for i, t in enumerate(targets):
        tgt[i, : len(t)] = t
    a = points.data
    out = np.empty(bsz, dtype=points.dtype)
    fwd_nn = np.empty((bsz, m), dtype=np.int64)
    rev_nn = np.empty((bsz, width), dtype=np.int64)
    step = max(1, chunk_elems // max(1, m * width))
    for s in range(0, bsz, step):
        e = min(s + step, bsz)
        d = (a[s:e, :, None] - tgt[s:e, None, :]) ** 2
        d = np.where(valid[s:e, None, :], d, np.inf)
        fwd_nn[s:e] = d.argmin(axis=2)
        rev_nn[s:e] = d.argmin(axis=1)
        fwd = np.take_along_axis(d, fwd_nn[s:e, :, None], axis=2)[..., 0].sum(axis=1)
        rev = np.where(valid[s:e], np.take_along_axis(d, rev_nn[s:e, None, :], axis=1)[:, 0, :], 0.0).sum(axis=1)
        if reduction == "mean":
            fwd = fwd / m
            rev = rev / lens[s:e]
        out[s:e] = fwd + rev
    fwd_scale = 1.0 / m if reduction == "mean" else 1.0
    rev_scale = (1.0 / lens)[:, None] if reduction == "mean" else 1.0

    def bw(g):
        near = np.take_along_axis(tgt, fwd_nn, axis=1)
        grad = 2.0 * fwd_scale * (a - near)
        rows = np.broadcast_to(np.arange(bsz)[:, None], rev_nn.shape)
        contrib = 2.0 * rev_scale * (np.take_along_axis(a, rev_nn, axis=1) - tgt) * valid
        np.add.at(grad, (rows, rev_nn), contrib)
        return (grad * g[:, None],)

    return _record(out, (points,), bw, "chamfer_batch")


def foveated_weights(n_layers: int, n_classes: int, gamma_l: float, gamma_b: float) -> np.ndarray:
    """Weight matrix [n_layers, n_classes]; row L-1 / column k-1 holds gamma_l**(n-L) * gamma_b**(k-1).

    Layers run bottleneck (L=1) to output (L=n); classes smallest (k=1) to largest.
    """
    # scalar pow per entry: numpy's vectorised pow can differ from it in the last bit
    return np.array(
        [[gamma_l ** (n_layers - layer) * gamma_b ** (k - 1) for k in range(1, n_classes + 1)] for layer in range(1, n_layers + 1)],
        dtype=np.float64,
    )


def foveated_bins_loss(
    level_widths: list,
    gt_sets: list,
    classes,
    depth_range: DepthRange,
    cfg: LossConfig,
    n_classes: int | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Weighted Chamfer loss over all query responses.

    ``level_widths[L]`` holds the [B, m_L] widths of every box at layer L
    (bottleneck first); ``gt_sets[b]`` and ``classes[b]`` the ground truth and
    size class of box ``b``. Boxes with empty ground truth are skipped.
    With ``cfg.chamfer_reduction == "mean"`` the per-box distances are
    point-averaged and the weighted sum is divided by the number of kept boxes.
    Returns the loss and the unweighted per-(layer, class) Chamfer terms,
    scaled like the loss so that ``(weights * breakdown).sum()`` equals it.
    """
    classes = np.asarray(classes)
    n_layers = len(level_widths)
    n_classes = int(classes.max()) + 1 if n_classes is None else n_classes
    keep = np.array([len(g) > 0 for g in gt_sets])
    if not keep.any():
        raise ValueError("all boxes rejected (no valid ground truth)")
    kept_idx = np.flatnonzero(keep)
    gts = [gt_sets[i] for i in kept_idx]
    cls = classes[kept_idx]
    weights = foveated_weights(n_layers, n_classes, cfg.gamma_l, cfg.gamma_b)
    breakdown = np.zeros((n_layers, n_classes))
    total = None
    for layer, widths in enumerate(level_widths):
        if not keep.all():
            widths = getitem(widths, kept_idx)
        centers = bin_centers(widths, depth_range)
        per_box = chamfer_batch(centers, gts, reduction=cfg.chamfer_reduction)
        np.add.at(breakdown[layer], cls, per_box.data)
        term = tsum(per_box * weights[layer, cls].astype(per_box.dtype))
        total = term if total is None else total + term
    if cfg.chamfer_reduction == "mean":
        total = total * (1.0 / len(kept_idx))
        breakdown /= len(kept_idx)
    return total, breakdown


def total_loss(pixel, bins, cfg: LossConfig):
    return pixel + bins * cfg.beta
