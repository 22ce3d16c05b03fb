"""Seeded multiplicative speckle noise: g = clip(f + f * eta, 0, 1), eta ~ N(0, variance)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# noise variances of the benchmark grid
CANONICAL_VARIANCES = (0.08, 0.1, 0.3, 0.5, 0.7)


@dataclass(frozen=True)
class NoiseSpec:
    variance: float
    seed: int

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.variance}")


def derive_seed(*keys: int) -> int:
    """Mix integer keys into a single 64-bit seed (order-sensitive, platform-stable)."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


def add_speckle(img, spec: NoiseSpec):
    """Inject speckle noise.

    The Gaussian field comes from numpy's PCG64 generator seeded with
    ``spec.seed``, so ``(img, spec)`` fixes the output exactly. Variance 0
    returns an unmodified copy.
    """
    img = np.asarray(img, dtype=np.float64)
    if spec.variance == 0:
        return img.copy()
    eta = np.random.default_rng(spec.seed).normal(0.0, np.sqrt(spec.variance), size=img.shape)
    return np.clip(img + img * eta, 0.0, 1.0)


def noise_grid(img, variances, seed: int):
    """One noisy copy per variance, each drawn with an independent sub-seed."""
    variances = list(variances)
    if not variances:
        raise ValueError("variances must be non-empty")
    return [(v, add_speckle(img, NoiseSpec(v, derive_seed(seed, i)))) for i, v in enumerate(variances)]
