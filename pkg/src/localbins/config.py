"""Run configuration, read from flat ``key = value`` text files."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .bins import DepthRange, HeadConfig, Splitter
from .losses import LossConfig
from .query import REFERENCE_BOX_SIZES, scale_box_sizes

TRAINING_MODES = ("pixel_only", "naive", "qr", "qr_foveated")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # bins head
    n_seed: int = 4
    n_decoder: int = 4
    splitter: str = "linear_norm"
    splitter_eps: float = 1e-4
    seed_eps: float = 1e-3
    embed_hidden: int = 128
    seed_hidden: int = 256
    split_hidden: int = 128
    d_min: float = 1e-3
    d_max: float = 10.0
    # query-response
    box_sizes: tuple = REFERENCE_BOX_SIZES
    boxes_per_class: int = 16
    scale_boxes: bool = True
    gt_cap: int = 512
    naive_window: int = 3
    naive_locations: int = 64
    # losses
    beta: float = 0.02
    gamma_l: float = 0.3
    gamma_b: float = 0.3
    si_lambda: float = 0.85
    si_alpha: float = 10.0
    # training averages the Chamfer terms; "sum" is the literal summed form
    chamfer_reduction: str = "mean"
    # optimiser
    lr: float = 3.57e-4
    weight_decay: float = 0.1
    lr_final_factor: float = 1e-4
    lr_flat_fraction: float = 0.7
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # run
    training_mode: str = "qr_foveated"
    batch_size: int = 4
    steps: int = 2000
    height: int = 64
    width: int = 64
    seed: int = 0
    dtype: str = "float32"
    n_scenes: int = 200
    eval_batch: int = 8
    # studies
    sweep_values: tuple = (1, 2, 4, 8)
    coverage_height: int = 480
    coverage_width: int = 640
    coverage_naive_psci: tuple = (4096, 8192)
    coverage_qr_psci: tuple = (250, 500, 1000)
    analyze_images: int = 4
    analyze_locations: int = 100
    analyze_windows: tuple = REFERENCE_BOX_SIZES
    density_locations: int = 4

    def __post_init__(self):
        if self.training_mode not in TRAINING_MODES:
            raise ConfigError(f"training_mode must be one of {TRAINING_MODES}, got {self.training_mode!r}")
        for name in ("n_seed", "batch_size", "steps", "height", "width", "boxes_per_class", "gt_cap"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_decoder < 0:
            raise ConfigError("n_decoder must be >= 0")
        if self.height % 2**self.n_decoder or self.width % 2**self.n_decoder:
            raise ConfigError(f"resolution {self.height}x{self.width} not divisible by 2**{self.n_decoder}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        try:
            self.splitter_spec, self.depth_range, self.loss  # noqa: B018 - validate derived configs
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # derived views
    @property
    def splitter_spec(self) -> Splitter:
        return Splitter(self.splitter, self.splitter_eps)

    @property
    def depth_range(self) -> DepthRange:
        return DepthRange(self.d_min, self.d_max)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(self.beta, self.gamma_l, self.gamma_b, self.si_lambda, self.si_alpha, self.chamfer_reduction)

    @property
    def head(self) -> HeadConfig:
        return HeadConfig(self.n_seed, self.splitter_spec, self.depth_range, self.seed_eps)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def n_bins_out(self) -> int:
        return self.n_seed * 2**self.n_decoder

    @property
    def uses_localbins(self) -> bool:
        return self.training_mode != "pixel_only"

    @property
    def extent(self) -> tuple[int, int]:
        return self.height, self.width

    def train_box_sizes(self) -> tuple:
        if self.scale_boxes:
            return scale_box_sizes(self.box_sizes, self.extent)
        return tuple(self.box_sizes)

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, default, raw: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(TrainConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        updates[key] = _coerce(key, defaults[key], value)
    return dataclasses.replace(base, **updates)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
