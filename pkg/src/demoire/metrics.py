"""Image quality metrics on [0, 1] float arrays.

All three metrics treat their inputs as plain arrays: grayscale (h, w) or
color (h, w, c), but any matching pair of shapes works for the pointwise
ones. Color SSIM averages the per-channel scores.
"""

import numpy as np

from .errors import ShapeError

PSNR_CAP = 99.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("metric inputs are empty")
    return a, b


def mean_error(a, b) -> float:
    """Mean squared error over every element."""
    a, b = _paired(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for (near-)identical inputs."""
    a, b = _paired(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _valid_filter(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # valid-mode correlation; separable would be faster but this stays exact
    k = window.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def _ssim_single(x: np.ndarray, y: np.ndarray, peak: float) -> float:
    w = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2
    mu_x = _valid_filter(x, w)
    mu_y = _valid_filter(y, w)
    var_x = _valid_filter(x * x, w) - mu_x * mu_x
    var_y = _valid_filter(y * y, w) - mu_y * mu_y
    cov = _valid_filter(x * y, w) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak: float = 1.0) -> float:
    """Structural similarity with the standard 11x11 Gaussian window, sigma 1.5.

    Statistics come from valid-mode filtering, so each input axis must span at
    least the window. Returns exactly 1.0 for bitwise-identical inputs.
    """
    a, b = _paired(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise ShapeError(f"ssim expects (h, w) or (h, w, c) images, got shape {a.shape}")
    if a.shape[0] < _SSIM_WINDOW or a.shape[1] < _SSIM_WINDOW:
        raise ShapeError(
            f"ssim needs at least {_SSIM_WINDOW}x{_SSIM_WINDOW} pixels, got {a.shape[0]}x{a.shape[1]}"
        )
    scores = [_ssim_single(a[:, :, c], b[:, :, c], peak) for c in range(a.shape[2])]
    return float(np.mean(scores))
