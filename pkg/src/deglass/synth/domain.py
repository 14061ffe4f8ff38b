"""Stand-in "real" domain: a deterministic image degradation with its own colour
response, noise spectrum, vignette and block artefacts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class StylizeConfig:
    strength: float = 1.0
    color_shift: float = 0.06
    gamma_spread: float = 0.15
    grain_sigma: float = 0.025
    blotch_sigma: float = 0.04
    vignette: float = 0.3
    block: int = 4
    block_mix: float = 0.5


def stylize_real_domain(image: np.ndarray, rng_seed: int, config: StylizeConfig = StylizeConfig()) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an HxWx3 image, got {img.shape}")
    k = float(config.strength)
    if k == 0.0:
        return img.copy()
    rng = np.random.default_rng(rng_seed)
    h, w, _ = img.shape

    # blocking: blend with block means, like heavy lossy compression
    b = config.block
    if b > 1 and h % b == 0 and w % b == 0:
        means = img.reshape(h // b, b, w // b, b, 3).mean(axis=(1, 3))
        blocky = np.repeat(np.repeat(means, b, 0), b, 1)
        img = (1 - k * config.block_mix) * img + k * config.block_mix * blocky

    # grain plus low-frequency blotches
    grain = rng.normal(0.0, config.grain_sigma, img.shape)
    blotch = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (h, w, 1)), (h / 8, w / 8, 0))
    blotch *= config.blotch_sigma / max(blotch.std(), 1e-12)
    img = img + k * (grain + blotch)

    yy, xx = np.mgrid[0:h, 0:w]
    r2 = ((yy - (h - 1) / 2) / (h / 2)) ** 2 + ((xx - (w - 1) / 2) / (w / 2)) ** 2
    img = img * (1.0 - k * config.vignette * np.clip(r2, 0, 2) / 2)[..., None]

    # colour response: one channel is pushed down by the full shift, the
    # others move less; gamma moves each channel in the same direction
    lead = int(rng.integers(3))
    direction = rng.uniform(-0.5, 0.5, 3)
    direction[lead] = -1.0
    gamma = 1.0 - np.sign(direction) * rng.uniform(0.3, 1.0, 3) * config.gamma_spread
    img = np.clip(img, 0.0, 1.0) ** (1.0 + k * (gamma - 1.0))
    img = img + k * config.color_shift * direction
    return np.clip(img, 0.0, 1.0)
