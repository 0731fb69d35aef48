"""
The product regression loss next to L1
======================================

Per voxel the product term is ``-y p / (y p + p^2 + y^2)``. It stays in
[-1/3, 1], is smallest where the prediction equals the target and punishes a
wrong sign hardest. Added to L1 it steepens the gradient around the target.
"""

import numpy as np

from sdmseg.losses import l1_loss, product_terms, sdm_loss

y = 0.5
p = np.linspace(-1, 1, 9)
print(" p      product   L1")
for pi, v in zip(p, product_terms(p, np.full_like(p, y))):
    print("%5.2f  %8.4f  %5.2f" % (pi, v, abs(pi - y)))

###############################################################################
# Same magnitudes, opposite signs: the mismatched pair costs more.
print("matched  (0.3, 0.6):", float(product_terms(np.array(0.3), np.array(0.6))))
print("opposite (-0.3, 0.6):", float(product_terms(np.array(-0.3), np.array(0.6))))

###############################################################################
# Gradient magnitude of L1 alone and of L1 + product near the target 0.5.
target = np.full((1, 1, 1), 0.5)
for pi in (0.40, 0.45, 0.49, 0.51, 0.55, 0.60):
    pred = np.full((1, 1, 1), pi)
    g_l1 = l1_loss(pred, target)[1].item()
    g_both = sdm_loss(pred, target)[1].item()
    print("p=%.2f  |dL1|=%.3f  |d(L1+product)|=%.3f" % (pi, abs(g_l1), abs(g_both)))
