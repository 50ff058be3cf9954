"""
Learning a multi-layer residual sparsifying transform
=====================================================

Each layer sparsifies the residual left over by the layer above it. Learning
alternates exact sparse coding and closed-form transform updates, so the
objective can only go down. Here we learn one-, two- and three-layer models
on the same patches and compare the per-layer sparsity.
"""

import numpy as np

from mrstct import ctsim, mrst
from mrstct.imaging import PatchConfig, extract_patches

rng = np.random.default_rng(0)
cfg = PatchConfig(8, 1)
train = np.concatenate([extract_patches(ctsim.make_phantom("shepp_logan", n, n, 2.0), cfg)
                        for n in (96, 160)], axis=1)
train = train[:, rng.choice(train.shape[1], 5000, replace=False)]
print("training patches:", train.shape)

###############################################################################
# Thresholds shrink geometrically with depth: deeper residuals are smaller,
# so each layer keeps only the coefficients it can still justify.

for layers in (1, 2, 3):
    thresholds = mrst.geometric_thresholds(layers, first=40.0, ratio=0.5)
    lc = mrst.LearnConfig(iterations=30, thresholds=thresholds, patch=cfg, seed=0)
    model, codes, trace = mrst.learn(train, lc)
    drops = np.diff(trace)
    print(f"L={layers}: objective {trace[0]:.4g} -> {trace[-1]:.4g}, "
          f"largest increase {max(drops.max(), 0):.2g}")
    for l, z in enumerate(codes, 1):
        print(f"   layer {l}: eta={thresholds[l - 1]:5.1f}  "
              f"nonzeros {100 * np.count_nonzero(z) / z.size:5.2f}%")
    print("   max unitarity error:", max(mrst.unitarity_error(t) for t in model.transforms))
