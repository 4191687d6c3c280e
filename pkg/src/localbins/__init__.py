"""Per-pixel adaptive depth bins with query-response training, on numpy."""
from .bins import (
    BinState,
    DepthRange,
    HeadConfig,
    Splitter,
    SplitterKind,
    bin_centers,
    forward_localbins,
    hybrid_regress,
    split_bins,
)
from .config import ConfigError, TrainConfig, load_config, parse_config
from .losses import LossConfig, chamfer_1d, foveated_bins_loss, foveated_weights, silog_loss, total_loss
from .metrics import MetricsReport, compute_metrics
from .query import BoxQuery, QuerySet, coverage_report, generate_queries, query_bins
from .tensor import NonFiniteError, ShapeError, Tensor, backward, finite_diff_check

__version__ = "0.1.0"
