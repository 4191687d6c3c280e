"""
Box queries and supervision coverage
====================================

Random boxes per size class, the depth samples each box returns and how
much of a 640x480 frame a sampling scheme touches.
"""
import numpy as np

from localbins import coverage_report, generate_queries
from localbins.config import TrainConfig
from localbins.data import generate_scene
from localbins.query import extract_gt_depths, naive_coverage
from localbins.train import coverage_csv, coverage_study

rng = np.random.default_rng(0)
scene = generate_scene(rng, 32, 32)
qs = generate_queries(rng, (32, 32), sizes=(3, 5, 9), m=2)
for box in qs:
    d = extract_gt_depths(scene.depth, scene.mask, box, rng=rng)
    print(box, "->", len(d), "depths, mean", round(float(d.mean()), 3))

# naive subsampling covers 1.33% of the frame with 4096 locations
print(naive_coverage(4096, (480, 640), rng))
print(coverage_report(generate_queries(rng, (480, 640), m=250), (480, 640)))
print(coverage_csv(coverage_study(TrainConfig())))
