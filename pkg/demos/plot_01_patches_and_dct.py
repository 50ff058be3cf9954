"""
Patches and the DCT starting transform
======================================

Every model in this package acts on vectorized image patches. This script
extracts overlapping 8x8 patches from a phantom, puts them back, and shows
how sparse the 2D DCT already makes them before any learning happens.
"""

import numpy as np

from mrstct import ctsim, mrst
from mrstct.imaging import PatchConfig, accumulate_patches, extract_patches, overlap_counts

img = ctsim.make_phantom("shepp_logan", 64, 64, pixel_size=2.0)
cfg = PatchConfig(patch_side=8, stride=1)

# Patches are the columns of a p x N matrix, p = 64 pixels per patch.
patches = extract_patches(img, cfg)
print("patch matrix:", patches.shape)

# Putting patches back sums overlapping contributions; dividing by the
# overlap counts recovers the image exactly.
back = accumulate_patches(patches, cfg, img.width, img.height)
counts = overlap_counts(cfg, img.width, img.height)
print("max reassembly error:", np.abs(back / counts - img.data).max())

###############################################################################
# The separable DCT (a Kronecker product of two 1D DCT matrices) is the
# first-layer transform before learning.

omega = mrst.init_model(1, cfg.p).transforms[0]
print("unitarity error:", mrst.unitarity_error(omega))

coeffs = omega @ patches
for t in (10.0, 40.0, 100.0):
    kept = np.count_nonzero(mrst.hard_threshold(coeffs, t)) / coeffs.size
    print(f"threshold {t:6.1f}: {100 * kept:5.2f}% of coefficients survive")
