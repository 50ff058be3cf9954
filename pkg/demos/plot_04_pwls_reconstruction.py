"""
Penalized weighted least squares with a learned MRST prior
==========================================================

Reconstruction alternates two steps. The image update runs a few relaxed
ordered-subsets linearized augmented Lagrangian iterations on the weighted
data fit plus the transform-domain penalty. The sparse-coding step then
thresholds the residual codes of every layer exactly. This script compares
FBP with a single-layer and a two-layer prior on a small phantom.
"""

import sys

import numpy as np

from mrstct import ctsim, metrics, mrst, recon
from mrstct.imaging import PatchConfig, extract_patches

size, ps = 64, 4.0
truth = ctsim.make_phantom("shepp_logan", size, size, ps)
geo = ctsim.Geometry.covering(size, size, ps, 90)
sino = ctsim.simulate_lowdose(truth, geo, 1e4, seed=1)
init = ctsim.fbp(sino, size, size, ps)
roi = metrics.circular_roi(size, size)

###############################################################################
# Models are learned on phantoms drawn at other sizes, never on the truth.

cfg = PatchConfig(8, 1)
train = np.concatenate([extract_patches(ctsim.make_phantom("shepp_logan", n, n, ps), cfg)
                        for n in (48, 80)], axis=1)


def learn(thresholds):
    return mrst.learn(train, mrst.LearnConfig(100, thresholds, cfg, seed=0))[0]


# (model, beta, gammas), following configs/st.json and configs/mrst2.json.
# With two layers the first-layer threshold acts as gamma_1 / sqrt(2) and the
# quadratic penalty counts twice, hence the larger gamma_1 and halved beta.
models = {"ST": (learn([40.0]), 2e-5, [40.0]),
          "MRST2": (learn([57.0, 40.0]), 1e-5, [57.0, 45.0])}

###############################################################################
# ``reconstruct`` accepts a stream for per-iteration JSON lines; here we only
# look at the final images.

print(f"{'':8s}{'RMSE':>8s}{'SSIM':>8s}")
print(f"{'FBP':8s}{metrics.rmse(truth, init, roi):8.2f}{metrics.ssim(truth, init, roi):8.4f}")
for name, (model, beta, gammas) in models.items():
    rc = recon.ReconConfig(beta=beta, gammas=gammas, outer_iters=60, patch=cfg)
    img = recon.reconstruct(sino, model, rc, init).image
    print(f"{name:8s}{metrics.rmse(truth, img, roi):8.2f}{metrics.ssim(truth, img, roi):8.4f}")
    sys.stdout.flush()
