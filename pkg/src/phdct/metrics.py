"""Image-quality metrics: PSNR (RMSE form), windowed SSIM and MSE.

All three take the reference first. PSNR and SSIM read their peak value
from the reference, so they are not symmetric; MSE is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(ref, test) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=float)
    test = np.asarray(test, dtype=float)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: ref {ref.shape} vs test {test.shape}")
    return ref, test


def mse(ref, test) -> float:
    ref, test = _pair(ref, test)
    return float(np.mean((ref - test) ** 2))


def psnr(ref, test) -> float:
    """``20 log10(max(ref) / rmse)``; ``inf`` when the inputs are identical."""
    ref, test = _pair(ref, test)
    err = mse(ref, test)
    if err == 0.0:
        return math.inf
    peak = float(np.max(ref))
    if not peak > 0:
        raise ValueError("reference maximum must be positive for PSNR")
    return 20.0 * math.log10(peak / math.sqrt(err))


def ssim_map(ref, test) -> np.ndarray:
    """Local SSIM on the ``valid`` region of an 11x11 Gaussian window (sigma 1.5)."""
    ref, test = _pair(ref, test)
    if ref.ndim != 2 or min(ref.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs a 2-D image of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    L = float(np.max(ref))
    c1, c2 = (SSIM_K1 * L) ** 2, (SSIM_K2 * L) ** 2
    # radius 5 (truncate 3.5 * 1.5 rounds to 5): exactly an 11-tap kernel
    filt = lambda a: gaussian_filter(a, SSIM_SIGMA, truncate=3.5, mode="reflect")
    mu_r, mu_t = filt(ref), filt(test)
    var_r = filt(ref * ref) - mu_r ** 2
    var_t = filt(test * test) - mu_t ** 2
    cov = filt(ref * test) - mu_r * mu_t
    num = (2 * mu_r * mu_t + c1) * (2 * cov + c2)
    den = (mu_r ** 2 + mu_t ** 2 + c1) * (var_r + var_t + c2)
    pad = SSIM_WINDOW // 2
    return (num / den)[pad:-pad, pad:-pad]


def ssim(ref, test) -> float:
    ref, test = _pair(ref, test)
    if np.array_equal(ref, test):
        return 1.0
    return float(np.mean(ssim_map(ref, test)))


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float | None
    mse: float

    @property
    def identical(self) -> bool:
        return self.mse == 0.0

    def to_dict(self) -> dict:
        out = {"psnr": None if math.isinf(self.psnr) else self.psnr,
               "ssim": self.ssim, "mse": self.mse}
        if self.identical:
            out["identical"] = True
        return out


def report(ref, test) -> MetricReport:
    """All three metrics; SSIM is ``None`` for images smaller than its window."""
    ref, test = _pair(ref, test)
    s = ssim(ref, test) if ref.ndim == 2 and min(ref.shape) >= SSIM_WINDOW else None
    return MetricReport(psnr(ref, test), s, mse(ref, test))
