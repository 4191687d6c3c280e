"""
Adaptive bins by hand
=====================

Seed widths, splitting and hybrid regression on tiny arrays, without any
network. Run with ``python3 demos/01_bins_by_hand.py``.
"""
import numpy as np

from localbins import DepthRange, Splitter, Tensor, bin_centers, hybrid_regress
from localbins.bins import split_widths, splitter_activation

dr = DepthRange(1e-3, 10.0)

# two seed bins covering the range 40/60
widths = Tensor(np.array([[0.4, 0.6]]))
print("seed centers", bin_centers(widths, dr).data)

# the constant splitter halves every bin
alpha = splitter_activation(Splitter("constant"), None, widths)
fine = split_widths(widths, alpha)
print("constant split", fine.data)

# linear_norm reads a pair (x1, x2) per bin and splits at x1 / (x1 + x2 + eps)
mlp_out = Tensor(np.array([[3.0, 1.0, 0.5, 0.5]]))
alpha = splitter_activation(Splitter("linear_norm"), mlp_out, widths)
print("linear_norm alpha", alpha.data)
fine = split_widths(widths, alpha)
print("widths", fine.data, "sum", fine.data.sum())

# depth is the softmax-weighted mean of the centers at each pixel
w = Tensor(np.tile(fine.data.reshape(1, 4, 1, 1), (1, 1, 2, 2)))
logits = Tensor(np.random.default_rng(0).normal(size=(1, 4, 2, 2)))
print("depth\n", hybrid_regress(w, logits, dr).data[0, 0])
