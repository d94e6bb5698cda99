"""Seeded synthetic grayscale scenes used as stand-in secrets, cover targets and natural references."""

from __future__ import annotations

import numpy as np

from .imaging import ImageBuffer
from .rng import LaneRng


def scene(height: int, width: int, seed: int, noise: float = 1.5) -> ImageBuffer:
    """Shaded background, a few flat-filled disks and boxes, mild sensor noise."""
    rng = LaneRng(seed, lanes=16)
    u = iter(rng.uniform(64))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy, xx = yy / height, xx / width
    img = (40 + 150 * next(u)
           + 60 * (next(u) - 0.5) * xx + 60 * (next(u) - 0.5) * yy
           + 25 * np.sin(2 * np.pi * (1 + 2 * next(u)) * xx + 6.3 * next(u))
           * np.cos(2 * np.pi * (1 + 2 * next(u)) * yy))
    for _ in range(3):
        cx, cy, r = next(u), next(u), 0.1 + 0.25 * next(u)
        img[(xx - cx) ** 2 + (yy - cy) ** 2 < r * r] = 20 + 215 * next(u)
    for _ in range(2):
        x0, y0 = next(u) * 0.7, next(u) * 0.7
        x1, y1 = x0 + 0.1 + 0.3 * next(u), y0 + 0.1 + 0.3 * next(u)
        img[(xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)] = 20 + 215 * next(u)
    img = img + noise * rng.normal(height * width).reshape(height, width)
    return ImageBuffer(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8))
