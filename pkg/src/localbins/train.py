"""Training, evaluation and the study drivers behind the CLI."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import assign_params, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import FormatError, SceneSample, stack_batch
from .losses import LossConfig, foveated_bins_loss, silog_loss, total_loss
from .metrics import MetricsReport, bin_density_profile, compute_metrics, nearest_center_locality
from .model import forward, frozen, init_model
from .optim import AdamW
from .query import (
    REFERENCE_BOX_SIZES,
    coverage_report,
    extract_gt_depths,
    generate_queries,
    naive_coverage,
    naive_subsample_targets,
    query_states,
    sample_locations,
    scale_box_sizes,
    window_depths,
)
from .tensor import Tensor, backward, getitem
from .bins import bin_centers

log = logging.getLogger(__name__)

LOSS_HEADER = "step,pixel_loss,bins_loss,total"


@dataclass
class StepLosses:
    total: Tensor
    pixel: float
    bins: float
    breakdown: np.ndarray | None = None


@dataclass
class TrainResult:
    params: dict
    rows: list = field(default_factory=list)  # (step, pixel, bins, total)
    breakdown_rows: list = field(default_factory=list)

    def loss_csv(self) -> str:
        lines = [LOSS_HEADER]
        lines += [f"{s},{float(p)!r},{float(b)!r},{float(t)!r}" for s, p, b, t in self.rows]
        return "\n".join(lines) + "\n"


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per purpose so one consumer cannot shift another."""
    names = ("init", "data", "boxes")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def check_dataset(cfg: TrainConfig, samples: list[SceneSample]) -> None:
    if not samples:
        raise FormatError("dataset is empty")
    for i, s in enumerate(samples):
        if s.extent != cfg.extent:
            raise FormatError(f"sample {i} is {s.extent}, config expects {cfg.extent}")
        valid = s.depth[s.mask]
        if valid.size and (valid.min() < np.float32(cfg.d_min) or valid.max() > np.float32(cfg.d_max)):
            raise FormatError(f"sample {i} depths fall outside [{cfg.d_min}, {cfg.d_max}]")


def _bins_loss_cfg(cfg: TrainConfig) -> LossConfig:
    if cfg.training_mode == "qr_foveated":
        return cfg.loss
    # plain sum over layers and box sizes
    return dataclasses.replace(cfg.loss, gamma_l=1.0, gamma_b=1.0)


def qr_bins_loss(out, params: dict, depth, mask, cfg: TrainConfig, rng: np.random.Generator):
    """Query-response Chamfer loss for a batch, averaged over images."""
    n = depth.shape[0]
    sizes = cfg.train_box_sizes()
    boxes, batch_idx, classes, gts = [], [], [], []
    for i in range(n):
        qs = generate_queries(rng, cfg.extent, sizes, cfg.boxes_per_class)
        for box in qs:
            gts.append(extract_gt_depths(depth[i, 0], mask[i, 0], box, cfg.gt_cap, rng))
            classes.append(box.size_class)
        boxes.append(qs.boxes)
        batch_idx.append(np.full(len(qs), i))
    states = query_states(out.pyramid, params, np.concatenate(boxes), np.concatenate(batch_idx), cfg.extent, cfg.head)
    loss, breakdown = foveated_bins_loss(
        [s.widths for s in states], gts, np.array(classes), cfg.depth_range, _bins_loss_cfg(cfg), n_classes=len(sizes)
    )
    return loss * (1.0 / n), breakdown / n


def naive_bins_loss(out, depth, mask, cfg: TrainConfig, rng: np.random.Generator):
    """Chamfer between per-pixel spatial bins and the GT of a centered window."""
    n = depth.shape[0]
    bidx, rows, cols, gts = [], [], [], []
    for i in range(n):
        for (r, c), vals in naive_subsample_targets(depth[i, 0], mask[i, 0], cfg.naive_window, cfg.naive_locations, rng):
            bidx.append(i)
            rows.append(r)
            cols.append(c)
            gts.append(vals)
    bidx, rows, cols = np.array(bidx), np.array(rows), np.array(cols)
    levels = []
    n_dec = cfg.n_decoder
    for state in out.states:
        shift = n_dec - state.level
        levels.append(getitem(state.widths, (bidx, slice(None), rows >> shift, cols >> shift)))
    loss, breakdown = foveated_bins_loss(
        levels, gts, np.zeros(len(gts), dtype=np.int64), cfg.depth_range, _bins_loss_cfg(cfg), n_classes=1
    )
    return loss * (1.0 / n), breakdown / n


def compute_losses(params: dict, images, depth, mask, cfg: TrainConfig, rng: np.random.Generator) -> StepLosses:
    out = forward(params, images, cfg)
    pixel = silog_loss(out.depth, depth.astype(cfg.np_dtype), mask, cfg.si_lambda, cfg.si_alpha)
    if cfg.training_mode == "pixel_only":
        return StepLosses(pixel, pixel.item(), 0.0)
    if cfg.training_mode == "naive":
        bins, breakdown = naive_bins_loss(out, depth, mask, cfg, rng)
    else:
        bins, breakdown = qr_bins_loss(out, params, depth, mask, cfg, rng)
    total = total_loss(pixel, bins, cfg.loss)
    return StepLosses(total, pixel.item(), bins.item(), breakdown)


def train(cfg: TrainConfig, samples: list[SceneSample], out_dir=None, progress_every: int = 0) -> TrainResult:
    """Run ``cfg.steps`` AdamW steps; writes checkpoints and CSVs when ``out_dir`` is set."""
    check_dataset(cfg, samples)
    streams = rng_streams(cfg.seed)
    params = init_model(cfg, streams["init"])
    opt = AdamW(
        base_lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
        final_factor=cfg.lr_final_factor,
        flat_fraction=cfg.lr_flat_fraction,
    )
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    result = TrainResult(params=params)
    per_epoch = math.ceil(len(samples) / cfg.batch_size)
    perm = None
    for step in range(cfg.steps):
        epoch, pos = divmod(step, per_epoch)
        if pos == 0:
            perm = streams["data"].permutation(len(samples))
        idx = perm[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
        images, depth, mask = stack_batch([samples[i] for i in idx], cfg.np_dtype)
        for p in params.values():
            p.zero_grad()
        losses = compute_losses(params, images, depth, mask, cfg, streams["boxes"])
        backward(losses.total)
        opt.step(params, step, cfg.steps)
        result.rows.append((step, losses.pixel, losses.bins, losses.total.item()))
        if losses.breakdown is not None:
            result.breakdown_rows.append((step, losses.breakdown))
        if progress_every and step % progress_every == 0:
            log.info("step %d pixel %.4f bins %.4f total %.4f", step, losses.pixel, losses.bins, losses.total.item())
        if out_dir is not None and pos == per_epoch - 1:
            save_checkpoint(out_dir / "last.lbk", params)
    if out_dir is not None:
        save_checkpoint(out_dir / "model.lbk", params)
        (out_dir / "losses.csv").write_text(result.loss_csv(), encoding="utf-8")
        if result.breakdown_rows:
            (out_dir / "bins_breakdown.csv").write_text(breakdown_csv(cfg, result.breakdown_rows), encoding="utf-8")
    return result


def breakdown_csv(cfg: TrainConfig, rows) -> str:
    """Per-step, per-(layer, size class) Chamfer sums and the weights applied to them."""
    from .losses import foveated_weights

    lcfg = _bins_loss_cfg(cfg)
    lines = ["step,layer,size_class,weight,chamfer_sum,weighted"]
    for step, bd in rows:
        w = foveated_weights(bd.shape[0], bd.shape[1], lcfg.gamma_l, lcfg.gamma_b)
        for layer in range(bd.shape[0]):
            for k in range(bd.shape[1]):
                wt, ch = float(w[layer, k]), float(bd[layer, k])
                lines.append(f"{step},{layer + 1},{k + 1},{wt!r},{ch!r},{wt * ch!r}")
    return "\n".join(lines) + "\n"


def load_model(cfg: TrainConfig, checkpoint) -> dict:
    params = init_model(cfg, np.random.default_rng(0))
    assign_params(params, load_checkpoint(checkpoint))
    return params


def predict(params: dict, cfg: TrainConfig, images) -> np.ndarray:
    return forward(frozen(params), images, cfg).depth.data


def evaluate(params: dict, cfg: TrainConfig, samples: list[SceneSample]) -> MetricsReport:
    """Mean of per-image metrics over ``samples``."""
    check_dataset(cfg, samples)
    reports = []
    for s in range(0, len(samples), cfg.eval_batch):
        chunk = samples[s : s + cfg.eval_batch]
        images, depth, mask = stack_batch(chunk, cfg.np_dtype)
        pred = predict(params, cfg, images)
        for i in range(len(chunk)):
            reports.append(compute_metrics(pred[i], depth[i], mask[i]))
    return MetricsReport.mean(reports)


def metrics_csv(report: MetricsReport) -> str:
    d = report.as_dict()
    return ",".join(d) + "\n" + ",".join(f"{v:.6f}" for v in d.values()) + "\n"


def sweep_bins(cfg: TrainConfig, values, train_samples, eval_samples=None) -> list[tuple[int, float]]:
    """Train one model per N_seed (shared seed); returns (total bins, REL) rows sorted by bins."""
    values = list(values)
    if len(values) < 2:
        raise ValueError("sweep needs at least two N_seed values")
    eval_samples = eval_samples if eval_samples is not None else train_samples
    rows = []
    for v in values:
        c = cfg.with_overrides(n_seed=int(v))
        res = train(c, train_samples)
        rows.append((c.n_bins_out, evaluate(res.params, c, eval_samples).rel))
    return sorted(rows)


def coverage_study(cfg: TrainConfig) -> list[tuple[str, object]]:
    """Coverage of the naive and query-response schemes at the study resolution."""
    extent = (cfg.coverage_height, cfg.coverage_width)
    rng = rng_streams(cfg.seed)["boxes"]
    rows = []
    for psci in cfg.coverage_naive_psci:
        rows.append(("naive", naive_coverage(psci, extent, rng)))
    sizes = scale_box_sizes(REFERENCE_BOX_SIZES, extent) if cfg.scale_boxes else REFERENCE_BOX_SIZES
    for psci in cfg.coverage_qr_psci:
        qs = generate_queries(rng, extent, sizes, psci // len(sizes))
        rows.append(("qr", coverage_report(qs, extent)))
    return rows


def coverage_csv(rows) -> str:
    return "scheme,psci,px_covered,coverage_pct\n" + "".join(f"{name},{rep.csv_row()}\n" for name, rep in rows)


def analyze(params: dict, cfg: TrainConfig, samples: list[SceneSample]):
    """Locality curves and density profiles at random pixels of random images.

    Returns ``(locality_csv, density_csv)`` text.
    """
    if not cfg.uses_localbins:
        raise ValueError("analysis needs a LocalBins model")
    check_dataset(cfg, samples)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])
    windows = tuple(cfg.analyze_windows)
    picks = rng.choice(len(samples), size=min(cfg.analyze_images, len(samples)), replace=False)
    loc_lines = ["image,location,row,col," + ",".join(f"w{w}" for w in windows)]
    dens_lines = ["image,location,source,window,depth,density"]
    for img_no, si in enumerate(picks):
        s = samples[int(si)]
        out = forward(frozen(params), s.image[None].astype(cfg.np_dtype), cfg)
        centers = bin_centers(out.states[-1].widths, cfg.depth_range).data[0]
        locs = sample_locations(rng, s.mask[0], cfg.analyze_locations)
        curves = []
        for j, (r, c) in enumerate(locs):
            cvec = centers[:, r, c].astype(np.float64)
            sets = [window_depths(s.depth[0], s.mask[0], int(r), int(c), w) for w in windows]
            dist = nearest_center_locality(cvec, sets)
            curves.append(dist)
            loc_lines.append(f"{img_no},{j},{r},{c}," + ",".join(f"{d:.6f}" for d in dist))
            if j < cfg.density_locations:
                grid, dens = bin_density_profile(cvec, cfg.depth_range)
                dens_lines += [f"{img_no},{j},pred,0,{g:.6f},{v:.6f}" for g, v in zip(grid, dens)]
                for w, vals in zip(windows, sets):
                    grid, dens = bin_density_profile(vals, cfg.depth_range, bandwidth=None)
                    dens_lines += [f"{img_no},{j},gt,{w},{g:.6f},{v:.6f}" for g, v in zip(grid, dens)]
        mean = np.mean(curves, axis=0)
        loc_lines.append(f"{img_no},mean,,," + ",".join(f"{d:.6f}" for d in mean))
    return "\n".join(loc_lines) + "\n", "\n".join(dens_lines) + "\n"
