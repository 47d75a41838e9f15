"""Image quality metrics on [0, 1] rasters."""

import numpy as np
from scipy import signal

PSNR_CAP = 99.0
MSE_FLOOR = 1e-10


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr_from_mse(mse) -> float:
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range, capped at 99."""
    a, b = _pair(a, b)
    return psnr_from_mse(np.mean((a - b) ** 2))


def gaussian_window(size=11, sigma=1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, *, window_size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0) -> float:
    """Mean structural similarity, Gaussian-weighted windows, averaged over channels.

    Only windows that fit entirely inside the image are used.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window_size or a.shape[1] < window_size:
        raise ValueError(f"image {a.shape[:2]} smaller than the {window_size}x{window_size} window")
    win = gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    filt = lambda x: signal.convolve2d(x, win, mode="valid")
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
