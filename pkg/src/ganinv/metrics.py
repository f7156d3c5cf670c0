"""Reconstruction quality metrics.

All pixel metrics rescale [-1, 1] images onto [0, 1] first. PSNR is
10*log10(1/MSE) with an infinity sentinel at zero error (serialized as
the string "inf" in CSV). MS-SSIM runs 3 scales — 32 px cannot carry
the canonical 5 — with global per-channel statistics per scale, the
standard constants C1=0.01^2, C2=0.03^2, a 2x average pool between
scales, and uniform exponents 1/3; negative similarity factors clamp to
0 before exponentiation. metrics(x, x) is exactly
(0, inf, 1.0, 0.0, 1.0) because every factor divides a float by itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ganinv.graph import ShapeMismatch
from ganinv.losses import id_similarity, perceptual_distance

C1 = 0.01**2
C2 = 0.03**2
SCALES = 3


@dataclass
class MetricsRow:
    l2: float
    psnr: float  # math.inf when l2 == 0
    ms_ssim: float
    lpips_proxy: float
    id_proxy: float
    seconds: float = 0.0

    def csv_fields(self):
        psnr = "inf" if math.isinf(self.psnr) else f"{self.psnr:.6g}"
        return (
            f"{self.l2:.10g}",
            psnr,
            f"{self.ms_ssim:.10g}",
            f"{self.lpips_proxy:.10g}",
            f"{self.id_proxy:.10g}",
            f"{self.seconds:.6g}",
        )


def _to_unit(x):
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def _avg_pool2(x):
    c, h, w = x.shape
    return x[:, : h - h % 2, : w - w % 2].reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _ssim_parts(a, b):
    """Global per-channel luminance and contrast-structure terms."""
    axes = (1, 2)
    mu_a = a.mean(axis=axes)
    mu_b = b.mean(axis=axes)
    var_a = ((a - mu_a[:, None, None]) ** 2).mean(axis=axes)
    var_b = ((b - mu_b[:, None, None]) ** 2).mean(axis=axes)
    cov = ((a - mu_a[:, None, None]) * (b - mu_b[:, None, None])).mean(axis=axes)
    lum = (2 * mu_a * mu_b + C1) / (mu_a**2 + mu_b**2 + C1)
    cs = (2 * cov + C2) / (var_a + var_b + C2)
    return float(lum.mean()), float(cs.mean())


def ms_ssim(x, y) -> float:
    if np.shape(x) != np.shape(y):
        raise ShapeMismatch("ms_ssim", f"shapes differ: {np.shape(x)} vs {np.shape(y)}")
    a, b = _to_unit(x), _to_unit(y)
    factors = []
    for scale in range(SCALES):
        lum, cs = _ssim_parts(a, b)
        factors.append(cs if scale < SCALES - 1 else cs * lum)
        if scale < SCALES - 1:
            a, b = _avg_pool2(a), _avg_pool2(b)
    out = 1.0
    for f in factors:
        out *= max(f, 0.0) ** (1.0 / SCALES)
    return float(out)


def psnr(l2: float) -> float:
    return math.inf if l2 == 0.0 else 10.0 * math.log10(1.0 / l2)


def metrics(x, y, proxy_params, seconds: float = 0.0) -> MetricsRow:
    """Full metric row for a reconstruction pair in [-1, 1]."""
    if np.shape(x) != np.shape(y):
        raise ShapeMismatch("metrics", f"shapes differ: {np.shape(x)} vs {np.shape(y)}")
    du = _to_unit(x) - _to_unit(y)
    l2 = float(np.mean(du * du))
    return MetricsRow(
        l2=l2,
        psnr=psnr(l2),
        ms_ssim=ms_ssim(x, y),
        lpips_proxy=perceptual_distance(proxy_params, x, y),
        id_proxy=id_similarity(proxy_params, x, y),
        seconds=seconds,
    )
