"""
Training a small model
======================

A short qr_foveated run on 32x32 synthetic scenes, evaluated on held-out
scenes, followed by the locality curves. About two minutes on one core.
"""
import numpy as np

from localbins import train as tr
from localbins.config import TrainConfig
from localbins.data import generate_corpus

cfg = TrainConfig(height=32, width=32, n_decoder=3, steps=300, training_mode="qr_foveated")
train_set = generate_corpus(0, 60, 32, 32)
eval_set = generate_corpus(1, 20, 32, 32)

res = tr.train(cfg, train_set, progress_every=50)
print("first / last total loss", res.rows[0][3], res.rows[-1][3])
print(tr.metrics_csv(tr.evaluate(res.params, cfg, eval_set)))

# mean distance from windowed ground truth to the nearest predicted center, per window size
loc, _ = tr.analyze(res.params, cfg.with_overrides(analyze_images=2, analyze_locations=20), eval_set)
means = [r for r in loc.splitlines() if ",mean," in r]
print(loc.splitlines()[0])
print("\n".join(means))
