"""Procedural depth scenes and the on-disk corpus format.

Corpus layout (little-endian): ``b"LBDS"``, u32 sample count, then per
sample u32 H, u32 W, f32 image (3*H*W), f32 depth (H*W) and the validity
mask packed row-major, LSB first, into ceil(H*W/8) bytes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .bins import DepthRange

MAGIC = b"LBDS"
INVALID_FRACTION = 0.02


class FormatError(ValueError):
    pass


@dataclass
class SceneSample:
    image: np.ndarray  # [3, H, W] float32 in [0, 1]
    depth: np.ndarray  # [1, H, W] float32 meters (0 where invalid)
    mask: np.ndarray  # [1, H, W] bool

    @property
    def extent(self) -> tuple[int, int]:
        return self.depth.shape[1], self.depth.shape[2]


def _plane(h, w, d0, gy, gx):
    yy, xx = np.mgrid[0:h, 0:w]
    return d0 + gy * yy / h + gx * xx / w


def _render_image(rng, depth, surface, n_surfaces, depth_range: DepthRange):
    h, w = depth.shape
    # surface identity only tints: zero-mean chroma keeps the channel mean equal to the attenuation
    tint = rng.uniform(-1.0, 1.0, size=(n_surfaces, 3))
    tint -= tint.mean(axis=1, keepdims=True)
    chroma = 1.0 + 0.3 * tint / np.abs(tint).max(axis=1, keepdims=True).clip(1e-9)
    # brightness falls with distance so appearance carries depth
    atten = 0.1 + 0.65 * np.exp(-1.5 * (depth - depth_range.d_min) / depth_range.span)
    noise = gaussian_filter(rng.normal(size=(h, w)), sigma=1.0)
    img = chroma[surface].transpose(2, 0, 1) * atten[None] + 0.01 * noise[None]
    return np.clip(img, 0.0, 1.0)


def _invalid_mask(rng, h, w):
    return rng.random((h, w)) >= INVALID_FRACTION


def generate_scene(rng: np.random.Generator, h: int, w: int, depth_range: DepthRange = DepthRange()) -> SceneSample:
    """Z-buffered composition of 3-8 primitives (gradient planes, boxes, spheres)."""
    span = depth_range.span
    lo = depth_range.d_min + span * rng.uniform(0.05, 0.3)
    hi = depth_range.d_min + span * rng.uniform(0.55, 0.95)
    n_prims = int(rng.integers(3, 9))

    # background: a slanted plane covering the whole frame
    far = rng.uniform(0.7, 1.0) * (hi - lo) + lo
    depth = np.clip(_plane(h, w, far, -rng.uniform(0, 0.5) * (far - lo), rng.uniform(-0.2, 0.2) * (far - lo)), lo, hi)
    surface = np.zeros((h, w), dtype=np.int64)
    yy, xx = np.mgrid[0:h, 0:w]

    for sid in range(1, n_prims):
        kind = rng.choice(["plane", "box", "sphere"], p=[0.25, 0.4, 0.35])
        d0 = rng.uniform(lo, hi)
        if kind == "plane":
            # floor-like plane filling the frame below a horizon row
            horizon = rng.uniform(0.3, 0.8) * h
            cand = np.where(yy >= horizon, d0 - (yy - horizon) / h * (d0 - lo) * 2.0, np.inf)
        elif kind == "box":
            bh, bw = rng.uniform(0.15, 0.5) * h, rng.uniform(0.15, 0.5) * w
            y0, x0 = rng.uniform(0, h - bh), rng.uniform(0, w - bw)
            inside = (yy >= y0) & (yy < y0 + bh) & (xx >= x0) & (xx < x0 + bw)
            tilt = rng.uniform(-0.15, 0.15) * (hi - lo)
            cand = np.where(inside, d0 + tilt * (xx - x0) / max(bw, 1.0), np.inf)
        else:
            r = rng.uniform(0.08, 0.3) * min(h, w)
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            rho2 = ((yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2) / r**2
            bulge = rng.uniform(0.05, 0.2) * (hi - lo)
            cand = np.where(rho2 < 1.0, d0 - bulge * np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0)), np.inf)
        cand = np.clip(cand, lo, np.inf)
        closer = cand < depth
        depth = np.where(closer, cand, depth)
        surface = np.where(closer, sid, surface)

    depth = np.clip(depth, lo, hi)
    image = _render_image(rng, depth, surface, n_prims, depth_range)
    mask = _invalid_mask(rng, h, w)
    return _finish(image, depth, mask, depth_range)


def generate_constant_scene(rng: np.random.Generator, h: int, w: int, depth_value: float, depth_range: DepthRange = DepthRange()) -> SceneSample:
    """A single fronto-parallel surface at ``depth_value`` meters."""
    depth = np.full((h, w), float(depth_value))
    image = _render_image(rng, depth, np.zeros((h, w), dtype=np.int64), 1, depth_range)
    return _finish(image, depth, _invalid_mask(rng, h, w), depth_range)


def _finish(image, depth, mask, depth_range) -> SceneSample:
    d = depth.astype(np.float32)
    d = np.clip(d, np.float32(depth_range.d_min), np.float32(depth_range.d_max))
    d = np.where(mask, d, np.float32(0.0)).astype(np.float32)
    return SceneSample(image=image.astype(np.float32), depth=d[None], mask=mask[None].copy())


def generate_corpus(seed: int, n: int, h: int, w: int, depth_range: DepthRange = DepthRange()) -> list[SceneSample]:
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
    return [generate_scene(r, h, w, depth_range) for r in rngs]


def write_corpus(samples: list[SceneSample], path) -> None:
    parts = [MAGIC, struct.pack("<I", len(samples))]
    for s in samples:
        h, w = s.extent
        parts.append(struct.pack("<II", h, w))
        parts.append(np.ascontiguousarray(s.image, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(s.depth, dtype="<f4").tobytes())
        parts.append(np.packbits(s.mask.reshape(-1), bitorder="little").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_corpus(path) -> list[SceneSample]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    out = []
    for i in range(count):
        if pos + 8 > len(buf):
            raise FormatError(f"{path}: truncated at sample {i}")
        h, w = struct.unpack_from("<II", buf, pos)
        pos += 8
        n_img, n_dep, n_mask = 3 * h * w * 4, h * w * 4, (h * w + 7) // 8
        if pos + n_img + n_dep + n_mask > len(buf):
            raise FormatError(f"{path}: truncated payload in sample {i}")
        image = np.frombuffer(buf, dtype="<f4", count=3 * h * w, offset=pos).reshape(3, h, w).astype(np.float32)
        pos += n_img
        depth = np.frombuffer(buf, dtype="<f4", count=h * w, offset=pos).reshape(1, h, w).astype(np.float32)
        pos += n_dep
        bits = np.frombuffer(buf, dtype=np.uint8, count=n_mask, offset=pos)
        mask = np.unpackbits(bits, count=h * w, bitorder="little").astype(bool).reshape(1, h, w)
        pos += n_mask
        out.append(SceneSample(image=image, depth=depth, mask=mask))
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def stack_batch(samples: list[SceneSample], dtype=np.float64):
    """Arrays (images [N,3,H,W], depth [N,1,H,W], mask [N,1,H,W]) for a batch."""
    images = np.stack([s.image for s in samples]).astype(dtype)
    depth = np.stack([s.depth for s in samples]).astype(np.float64)
    mask = np.stack([s.mask for s in samples])
    return images, depth, mask
