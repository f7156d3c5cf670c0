"""Procedural training images and self-inversion target sampling.

The procedural set renders 1-3 anti-aliased ellipses or rectangles with
seed-determined colors, positions, sizes and orientations over a linear
two-color gradient background. Coverage comes from a signed-distance
field clamped over one pixel, and every value is a convex blend of
colors in [-1, 1], so the range holds by construction.

Self-inversion targets are drawn from a frozen generator instead: z ~
N(0, I) through the mapping network, then the generator itself. Those
targets lie in the generator's range by definition, which makes
reconstruction error a meaningful training signal at this scale.
"""

from __future__ import annotations

import numpy as np

from ganinv.prng import Rng


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _render(rng: Rng, resolution: int) -> np.ndarray:
    r = resolution
    ys, xs = np.mgrid[0:r, 0:r]
    # pixel centers in [0,1)^2
    px = np.stack([(xs + 0.5) / r, (ys + 0.5) / r], axis=-1)  # [r,r,2]

    # gradient background between two colors along a random direction
    c0 = np.array([rng.uniform() * 2 - 1 for _ in range(3)])
    c1 = np.array([rng.uniform() * 2 - 1 for _ in range(3)])
    theta = rng.uniform() * 2 * np.pi
    d = np.array([np.cos(theta), np.sin(theta)])
    t = np.clip((px - 0.5) @ d + 0.5, 0.0, 1.0)
    img = c0[None, None, :] * (1 - t[..., None]) + c1[None, None, :] * t[..., None]

    for _ in range(1 + rng.below(3)):
        kind = rng.below(2)  # 0 ellipse, 1 rectangle
        center = np.array([0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform()])
        half = np.array([0.05 + 0.3 * rng.uniform(), 0.05 + 0.3 * rng.uniform()])
        angle = rng.uniform() * np.pi
        color = np.array([rng.uniform() * 2 - 1 for _ in range(3)])
        q = (px - center) @ _rot(angle)
        if kind == 0:
            # approximate ellipse SDF: scaled radial distance
            rad = np.sqrt((q[..., 0] / half[0]) ** 2 + (q[..., 1] / half[1]) ** 2)
            dist = (rad - 1.0) * half.min()
        else:
            a = np.abs(q) - half
            dist = np.hypot(np.maximum(a[..., 0], 0), np.maximum(a[..., 1], 0)) + np.minimum(
                np.maximum(a[..., 0], a[..., 1]), 0
            )
        cov = np.clip(0.5 - dist * r, 0.0, 1.0)  # ~1px anti-aliased edge
        img = img * (1 - cov[..., None]) + color[None, None, :] * cov[..., None]

    return img.transpose(2, 0, 1)  # [3, r, r]


def sample_dataset(seed: int, n: int, resolution: int) -> np.ndarray:
    """n procedural images [n, 3, R, R], deterministic in seed."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = Rng(seed)
    return np.stack([_render(rng, resolution) for _ in range(n)])


def sample_latents(rng: Rng, n: int, z_dim: int) -> np.ndarray:
    return rng.normal((n, z_dim))
