"""Speckle one phantom at every canonical variance and score the six classical filters.

Run:  python3 demos/01_noise_and_filters.py
"""

import numpy as np

from specklebench import imaging
from specklebench.filters import FILTER_NAMES, apply_filter
from specklebench.metrics import psnr, ssim
from specklebench.noise import CANONICAL_VARIANCES, noise_grid

rng = np.random.default_rng(7)
clean = imaging.resize_bilinear(imaging.phantom_image(rng, "malignant"), 128, 128)

print(f"{'variance':>8}  {'noisy':>12}  " + "  ".join(f"{m:>12}" for m in FILTER_NAMES))
for variance, noisy in noise_grid(clean, CANONICAL_VARIANCES, seed=7):
    cells = [f"{psnr(clean, noisy):5.2f}/{ssim(clean, noisy):.3f}"]
    for name in FILTER_NAMES:
        out = np.clip(apply_filter(name, noisy), 0, 1)
        cells.append(f"{psnr(clean, out):5.2f}/{ssim(clean, out):.3f}")
    print(f"{variance:>8}  " + "  ".join(f"{c:>12}" for c in cells))
print("cells are PSNR dB / SSIM against the clean phantom")
