"""Synthetic clean RAW content for fixtures, demos and calibration tests."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .raw_core import MosaicImage, RawImage

# rough RGGB channel sensitivities of a daylight scene before white balance
CHANNEL_GAINS = (0.55, 1.0, 1.0, 0.7)


def synthetic_scene(rng, height_p: int = 248, width_p: int = 248, bit_depth: int = 12) -> RawImage:
    """Smooth shading plus hard-edged rectangles, packed RGGB in [0, 1]."""
    base = ndimage.gaussian_filter(rng.standard_normal((height_p, width_p)), sigma=12, mode="reflect")
    base = (base - base.min()) / (np.ptp(base) + 1e-12)
    lum = 0.1 + 0.5 * base
    for _ in range(int(rng.integers(4, 10))):
        h, w = rng.integers(8, max(9, height_p // 3)), rng.integers(8, max(9, width_p // 3))
        r, c = rng.integers(0, height_p - h + 1), rng.integers(0, width_p - w + 1)
        lum[r : r + h, c : c + w] = rng.uniform(0.05, 0.9)
    fine = ndimage.gaussian_filter(rng.standard_normal((height_p, width_p)), sigma=1.0)
    lum = np.clip(lum + 0.03 * fine / (fine.std() + 1e-12), 0.0, 1.0)
    tint = rng.uniform(0.8, 1.2, size=4)
    planes = np.stack([np.clip(lum * g * t, 0.0, 1.0) for g, t in zip(CHANNEL_GAINS, tint)])
    return RawImage(planes, bit_depth=bit_depth)


def flat_field(
    level: float,
    lambda_read: float,
    lambda_shot: float,
    rng,
    height: int = 64,
    width: int = 64,
    bit_depth: int = 16,
    black_level: int = 0,
) -> MosaicImage:
    """Uniformly lit capture with shot-read noise, quantized to DNs."""
    white = (1 << bit_depth) - 1
    x = np.full((height, width), float(level))
    y = x + np.sqrt(lambda_read + lambda_shot * x) * rng.standard_normal(x.shape)
    dn = np.clip(np.rint(y * (white - black_level)) + black_level, 0, white)
    return MosaicImage(dn.astype(np.uint16), bit_depth, black_level, white)
