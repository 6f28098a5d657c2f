"""PSNR and SSIM for light fields, computed per SAI and averaged over views."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from .lightfield import LightField4D, ShapeError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _views(a) -> np.ndarray:
    a = a.data if isinstance(a, LightField4D) else np.asarray(a)
    a = a.astype(np.float64)
    if a.ndim == 2:
        return a[None]
    if a.ndim == 4:
        return a.reshape((-1,) + a.shape[2:])
    raise ShapeError(f"expected a 2-D image or 4-D light field, got shape {a.shape}")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    A, B = _views(a), _views(b)
    if A.shape != B.shape:
        raise ShapeError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A, B


def psnr_per_view(a, b, peak: float = 1.0) -> np.ndarray:
    A, B = _pair(a, b)
    mse = ((A - B) ** 2).mean(axis=(1, 2))
    out = np.full(mse.shape, PSNR_CAP)
    nz = mse > 0
    out[nz] = np.minimum(10.0 * np.log10(peak**2 / mse[nz]), PSNR_CAP)
    return out


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB with a fixed peak; identical inputs report ``PSNR_CAP``."""
    return float(psnr_per_view(a, b, peak).mean())


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _window_size(h: int, w: int) -> int:
    size = min(SSIM_WINDOW, h, w)
    return size if size % 2 else size - 1


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    out = correlate1d(img, g, axis=-2, mode="constant")
    out = correlate1d(out, g, axis=-1, mode="constant")
    lo = k // 2
    return out[..., lo:img.shape[-2] - lo, lo:img.shape[-1] - lo]


def ssim_per_view(a, b, data_range: float = 1.0) -> np.ndarray:
    A, B = _pair(a, b)
    g = gaussian_window(_window_size(*A.shape[1:]))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(A, g)
    mu_b = _filter_valid(B, g)
    saa = _filter_valid(A * A, g) - mu_a**2
    sbb = _filter_valid(B * B, g) - mu_b**2
    sab = _filter_valid(A * B, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return (num / den).mean(axis=(1, 2))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over the valid region.

    Images smaller than the window use the largest odd window that fits.
    """
    return float(ssim_per_view(a, b, data_range).mean())
