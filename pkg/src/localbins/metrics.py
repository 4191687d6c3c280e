"""Depth accuracy metrics and the bin-locality analyses."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .bins import DepthRange

METRIC_FIELDS = ("delta1", "delta2", "delta3", "rel", "rms", "log10")


@dataclass(frozen=True)
class MetricsReport:
    delta1: float
    delta2: float
    delta3: float
    rel: float
    rms: float
    log10: float

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def mean(cls, reports) -> "MetricsReport":
        reports = list(reports)
        return cls(**{f: float(np.mean([getattr(r, f) for r in reports])) for f in METRIC_FIELDS})


def compute_metrics(pred, gt, mask) -> MetricsReport:
    """Standard monocular-depth metrics over the pixels where ``mask`` is true."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("compute_metrics: empty mask")
    p, g = pred[mask], gt[mask]
    if (p <= 0).any() or (g <= 0).any():
        raise ValueError("compute_metrics: depths must be positive under the mask")
    ratio = np.maximum(p / g, g / p)
    return MetricsReport(
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        rel=float(np.mean(np.abs(p - g) / g)),
        rms=float(np.sqrt(np.mean((p - g) ** 2))),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
    )


def nearest_center_locality(centers, gt_sets) -> np.ndarray:
    """Mean |gt - nearest center| for each window's depth set."""
    c = np.sort(np.asarray(centers, dtype=np.float64).ravel())
    out = []
    for depths in gt_sets:
        d = np.asarray(depths, dtype=np.float64).ravel()
        if d.size == 0:
            raise ValueError("nearest_center_locality: empty window")
        idx = np.searchsorted(c, d)
        lo = c[np.clip(idx - 1, 0, c.size - 1)]
        hi = c[np.clip(idx, 0, c.size - 1)]
        out.append(np.minimum(np.abs(d - lo), np.abs(d - hi)).mean())
    return np.array(out)


def default_bandwidth(depth_range: DepthRange, n_bins: int) -> float:
    return 0.1 * depth_range.span / np.sqrt(n_bins)


def bin_density_profile(values, depth_range: DepthRange, bandwidth: float | None = None, n_points: int = 256):
    """Gaussian KDE of ``values`` sampled on ``n_points`` over [d_min, d_max].

    Returns ``(grid, density)``. Works for predicted centers and for ground
    truth depth sets alike.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("bin_density_profile: no values")
    if bandwidth is None:
        bandwidth = default_bandwidth(depth_range, v.size)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(depth_range.d_min, depth_range.d_max, n_points)
    z = (grid[:, None] - v[None, :]) / bandwidth
    density = np.exp(-0.5 * z * z).sum(axis=1) / (v.size * bandwidth * np.sqrt(2 * np.pi))
    return grid, density
