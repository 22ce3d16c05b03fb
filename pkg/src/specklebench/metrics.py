"""MSE, PSNR and SSIM on unit-range images, and per-method aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"image dimensions differ: {ref.shape} vs {test.shape}")
    return ref, test


def mse_metric(ref, test) -> float:
    ref, test = _pair(ref, test)
    return float(np.mean((ref - test) ** 2))


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse < 0:
        raise ValueError("mse must be >= 0")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr(ref, test, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    return psnr_from_mse(mse_metric(ref, test), peak)


def _gauss_window():
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-x * x / (2 * SSIM_SIGMA ** 2))
    g /= g.sum()
    return g


def _local_mean(img, g):
    # valid-mode separable filtering: only windows fully inside the image
    rows = sliding_window_view(img, g.size, axis=1) @ g
    return sliding_window_view(rows, g.size, axis=0) @ g


def ssim(ref, test, data_range: float = 1.0) -> float:
    """Mean SSIM over all 11x11 Gaussian (sigma 1.5) windows lying inside the image."""
    ref, test = _pair(ref, test)
    if ref.ndim != 2 or min(ref.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs 2-D images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {ref.shape}")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    g = _gauss_window()
    mx, my = _local_mean(ref, g), _local_mean(test, g)
    sxx = _local_mean(ref * ref, g) - mx * mx
    syy = _local_mean(test * test, g) - my * my
    sxy = _local_mean(ref * test, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsRow:
    method: str
    variance: float
    psnr_db: float
    ssim: float
    mse: float
    n_images: int
    seed: int


def evaluate_method(ref_set, test_set, method_name: str, variance: float, seed: int) -> MetricsRow:
    """Average per-image metrics over aligned (reference, output) pairs.

    PSNR is averaged in the dB domain while MSE is averaged linearly, so for
    more than one image the row's PSNR is only bounded by the row's MSE:
    ``psnr_db >= 10*log10(1/mse)`` (Jensen), with equality for a single image.
    Any infinite per-image PSNR makes the aggregate infinite.
    """
    ref_set, test_set = list(ref_set), list(test_set)
    if not ref_set or len(ref_set) != len(test_set):
        raise ValueError(f"need equal, non-empty sets; got {len(ref_set)} refs and {len(test_set)} outputs")
    mses, psnrs, ssims = [], [], []
    for r, t in zip(ref_set, test_set):
        m = mse_metric(r, t)
        mses.append(m)
        psnrs.append(psnr_from_mse(m))
        ssims.append(ssim(r, t))
    return MetricsRow(
        method=method_name,
        variance=float(variance),
        psnr_db=float(math.fsum(psnrs) / len(psnrs)) if all(map(math.isfinite, psnrs)) else math.inf,
        ssim=math.fsum(ssims) / len(ssims),
        mse=math.fsum(mses) / len(mses),
        n_images=len(ref_set),
        seed=int(seed),
    )
