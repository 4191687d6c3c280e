"""
Losses on small examples
========================

SILog on a perturbed depth map, the 1-D Chamfer distance and the foveated
weight matrix.
"""
import numpy as np

from localbins import Tensor, chamfer_1d, foveated_weights, silog_loss
from localbins.losses import chamfer_brute

rng = np.random.default_rng(0)
gt = rng.uniform(1, 9, size=(1, 1, 8, 8))
mask = np.ones_like(gt, bool)

# a global scale error costs little, per-pixel noise costs more
print("silog scaled", silog_loss(Tensor(1.5 * gt), gt, mask).item())
print("silog noisy ", silog_loss(Tensor(gt * rng.uniform(0.8, 1.2, gt.shape)), gt, mask).item())

# Chamfer sums squared nearest distances in both directions
print("chamfer({0},{1,3})", chamfer_1d([0.0], [1.0, 3.0]).item())
a, b = rng.uniform(0, 10, 16), rng.uniform(0, 10, 300)
print("sorted search vs brute force", chamfer_1d(a, b).item(), chamfer_brute(a, b))

# rows are decoder levels, columns box size classes; the finest level with the smallest box weighs 1
np.set_printoptions(precision=4, suppress=False)
print(foveated_weights(5, 5, 0.3, 0.3))
