"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, TrainConfig, load_config
from .data import FormatError, generate_corpus, read_corpus, write_corpus
from . import train as tr

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="localbins", description="LocalBins depth estimation on synthetic scenes")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp, data=False, checkpoint=False):
        sp.add_argument("--config", type=Path, help="key = value config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if data:
            sp.add_argument("--data", type=Path, required=True, help="LBDS dataset file")
        if checkpoint:
            sp.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")

    g = sub.add_parser("generate", help="write a synthetic scene corpus")
    common(g)
    g.add_argument("--n", type=int, help="number of scenes (default: config n_scenes)")

    t = sub.add_parser("train", help="train a model")
    common(t, data=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e, data=True, checkpoint=True)

    s = sub.add_parser("sweep-bins", help="REL against the total number of bins")
    common(s, data=True)
    s.add_argument("--values", help="comma separated N_seed values (default: config sweep_values)")
    s.add_argument("--eval-data", type=Path, help="held-out dataset for the REL column")

    c = sub.add_parser("coverage", help="supervision coverage per sampling scheme")
    common(c)

    a = sub.add_parser("analyze", help="bin locality and density curves")
    common(a, data=True, checkpoint=True)
    a.add_argument("--locations", type=int, help="locations per image (default: config analyze_locations)")
    return p


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _load_data(path: Path):
    if not path.exists():
        raise FormatError(f"dataset {path} does not exist")
    return read_corpus(path)


def run(args) -> None:
    cfg = _config(args)
    if args.verb == "generate":
        n = args.n if args.n is not None else cfg.n_scenes
        samples = generate_corpus(cfg.seed, n, cfg.height, cfg.width, cfg.depth_range)
        args.out.mkdir(parents=True, exist_ok=True)
        write_corpus(samples, args.out / "scenes.lbds")
        print(args.out / "scenes.lbds")
    elif args.verb == "train":
        tr.train(cfg, _load_data(args.data), args.out, progress_every=100)
        print(args.out / "model.lbk")
    elif args.verb == "eval":
        params = tr.load_model(cfg, args.checkpoint)
        report = tr.evaluate(params, cfg, _load_data(args.data))
        print(_write(args.out, "metrics.csv", tr.metrics_csv(report)))
    elif args.verb == "sweep-bins":
        values = cfg.sweep_values
        if args.values:
            try:
                values = tuple(int(v) for v in args.values.split(","))
            except ValueError as exc:
                raise UsageError(f"bad --values {args.values!r}") from exc
        if len(values) < 2:
            raise UsageError("sweep needs at least two N_seed values")
        eval_samples = _load_data(args.eval_data) if args.eval_data else None
        rows = tr.sweep_bins(cfg, values, _load_data(args.data), eval_samples)
        text = "n_bins,rel\n" + "".join(f"{n},{r:.6f}\n" for n, r in rows)
        print(_write(args.out, "sweep_bins.csv", text))
    elif args.verb == "coverage":
        print(_write(args.out, "coverage.csv", tr.coverage_csv(tr.coverage_study(cfg))))
    elif args.verb == "analyze":
        if args.locations is not None:
            if args.locations <= 0:
                raise UsageError("--locations must be positive")
            cfg = cfg.with_overrides(analyze_locations=args.locations)
        params = tr.load_model(cfg, args.checkpoint)
        loc, dens = tr.analyze(params, cfg, _load_data(args.data))
        print(_write(args.out, "locality.csv", loc))
        print(_write(args.out, "density.csv", dens))


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
