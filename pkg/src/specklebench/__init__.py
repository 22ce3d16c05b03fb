"""Speckle-noise denoising benchmark: noise simulation, classical filters,
from-scratch convolutional denoising autoencoders, and image-quality metrics."""

from .dae import Checkpoint, NetworkConfig, TrainConfig, build_network, denoise, train
from .filters import (FilterConfig, anisotropic_diffusion, average_filter, bilateral_filter,
                      gaussian_filter, median_filter, wiener_filter)
from .imaging import build_manifest, generate_phantom_corpus, load_png, resize_bilinear, save_png
from .metrics import MetricsRow, evaluate_method, mse_metric, psnr, ssim
from .noise import CANONICAL_VARIANCES, NoiseSpec, add_speckle, noise_grid

__version__ = "0.1.0"
