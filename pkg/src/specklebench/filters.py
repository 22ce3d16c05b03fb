"""Classical speckle-reduction baselines.

All filters take and return 2-D float images in [0, 1] and replicate edge
pixels at the border.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_WIENER_EPS = 1e-12


@dataclass
class FilterConfig:
    median_kernel: int = 3
    average_kernel: int = 3
    gaussian_sigma: float = 1.0
    gaussian_kernel: int = 5
    bilateral_sigma_spatial: float = 2.0
    bilateral_sigma_range: float = 0.1
    bilateral_kernel: int = 5
    wiener_window: int = 3
    pm_iterations: int = 10
    pm_kappa: float = 0.1
    pm_lambda: float = 0.25

    def __post_init__(self):
        for name in ("median_kernel", "average_kernel", "gaussian_kernel", "bilateral_kernel", "wiener_window"):
            _check_odd(getattr(self, name), name)
        for name in ("gaussian_sigma", "bilateral_sigma_spatial", "bilateral_sigma_range", "pm_kappa"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.pm_iterations < 0:
            raise ValueError("pm_iterations must be >= 0")
        _check_lambda(self.pm_lambda)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _check_odd(k, name="kernel"):
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ValueError(f"{name} must be an odd positive integer, got {k}")


def _check_lambda(lam):
    if not 0 < lam <= 0.25:
        raise ValueError(f"diffusion lambda must lie in (0, 0.25], got {lam}")


def _windows(img: np.ndarray, k: int) -> np.ndarray:
    """[H, W, k, k] view of edge-replicated neighbourhoods."""
    r = k // 2
    padded = np.pad(np.asarray(img, dtype=np.float64), r, mode="edge")
    return sliding_window_view(padded, (k, k))


def median_filter(img, k: int = 3):
    _check_odd(k)
    win = _windows(img, k)
    return np.median(win.reshape(*win.shape[:2], -1), axis=-1)


def average_filter(img, k: int = 3):
    _check_odd(k)
    return _windows(img, k).mean(axis=(-2, -1))


def gaussian_kernel(sigma: float, k: int) -> np.ndarray:
    """Sampled, normalised 1-D Gaussian of odd length ``k``."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    _check_odd(k)
    x = np.arange(k) - k // 2
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def gaussian_filter(img, sigma: float = 1.0, k: int = 5):
    """Separable Gaussian blur: rows, then columns."""
    g = gaussian_kernel(sigma, k)
    r = k // 2
    img = np.asarray(img, dtype=np.float64)
    rows = sliding_window_view(np.pad(img, ((0, 0), (r, r)), mode="edge"), k, axis=1) @ g
    return sliding_window_view(np.pad(rows, ((r, r), (0, 0)), mode="edge"), k, axis=0) @ g


def bilateral_filter(img, sigma_spatial: float = 2.0, sigma_range: float = 0.1, k: int = 5):
    if sigma_spatial <= 0 or sigma_range <= 0:
        raise ValueError("bilateral sigmas must be > 0")
    _check_odd(k)
    img = np.asarray(img, dtype=np.float64)
    win = _windows(img, k)
    x = np.arange(k) - k // 2
    spatial = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * sigma_spatial ** 2))
    diff = win - img[:, :, None, None]
    w = spatial * np.exp(-diff * diff / (2 * sigma_range ** 2))
    return (w * win).sum(axis=(-2, -1)) / w.sum(axis=(-2, -1))


def wiener_filter(img, window: int = 3):
    """Locally adaptive (Lee-type) Wiener filter.

    The noise power is estimated as the mean of all local variances, and
    each pixel is shrunk towards its local mean by
    ``max(var - noise, 0) / var``.
    """
    _check_odd(window, "window")
    img = np.asarray(img, dtype=np.float64)
    win = _windows(img, window)
    mu = win.mean(axis=(-2, -1))
    var = (win * win).mean(axis=(-2, -1)) - mu * mu
    var = np.maximum(var, 0)
    noise = var.mean()
    gain = np.maximum(var - noise, 0) / np.maximum(var, _WIENER_EPS)
    return np.clip(mu + gain * (img - mu), 0.0, 1.0)


def anisotropic_diffusion(img, iterations: int = 10, kappa: float = 0.1, lam: float = 0.25):
    """Perona-Malik diffusion with conduction exp(-(grad/kappa)^2) over 4 neighbours."""
    _check_lambda(lam)
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    out = np.asarray(img, dtype=np.float64).copy()
    for _ in range(iterations):
        p = np.pad(out, 1, mode="edge")
        flux = 0.0
        for d in (p[:-2, 1:-1], p[2:, 1:-1], p[1:-1, :-2], p[1:-1, 2:]):
            grad = d - out
            flux = flux + np.exp(-(grad / kappa) ** 2) * grad
        out = out + lam * flux
    return out


def apply_filter(name: str, img, cfg: FilterConfig = None):
    """Run one of the six baselines by registry name with parameters from ``cfg``."""
    cfg = cfg or FilterConfig()
    if name == "median":
        return median_filter(img, cfg.median_kernel)
    if name == "average":
        return average_filter(img, cfg.average_kernel)
    if name == "gaussian":
        return gaussian_filter(img, cfg.gaussian_sigma, cfg.gaussian_kernel)
    if name == "bilateral":
        return bilateral_filter(img, cfg.bilateral_sigma_spatial, cfg.bilateral_sigma_range, cfg.bilateral_kernel)
    if name == "wiener":
        return wiener_filter(img, cfg.wiener_window)
    if name == "anisotropic":
        return anisotropic_diffusion(img, cfg.pm_iterations, cfg.pm_kappa, cfg.pm_lambda)
    raise KeyError(f"unknown filter {name!r}")


FILTER_NAMES = ("median", "gaussian", "average", "bilateral", "wiener", "anisotropic")
