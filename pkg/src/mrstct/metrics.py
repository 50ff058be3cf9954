"""Image quality metrics over a circular region of interest."""
import numpy as np
from scipy.ndimage import uniform_filter

from .imaging import ConfigError, Image


def _arr(img):
    return img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


def circular_roi(width, height, radius_fraction=1.0):
    """Centred disk mask; radius is ``radius_fraction * min(width, height) / 2``.

    A pixel is inside when its centre is within the radius of the image centre.
    """
    if not 0 < radius_fraction <= 1:
        raise ConfigError(f"radius_fraction must lie in (0, 1], got {radius_fraction}")
    yy, xx = np.mgrid[:height, :width]
    r = radius_fraction * min(width, height) / 2
    mask = (xx - (width - 1) / 2) ** 2 + (yy - (height - 1) / 2) ** 2 <= r * r
    if not mask.any():
        # a radius smaller than half a pixel still keeps the central pixel(s)
        mask[(height - 1) // 2:height // 2 + 1, (width - 1) // 2:width // 2 + 1] = True
    return mask


def _roi(a, roi):
    if roi is None:
        return np.ones(a.shape, dtype=bool)
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != a.shape:
        raise ConfigError(f"ROI shape {roi.shape} != image shape {a.shape}")
    return roi


def _pair(a, b):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ConfigError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b, roi=None):
    a, b = _pair(a, b)
    m = _roi(a, roi)
    d = a[m] - b[m]
    return float(np.sqrt(np.sum(d * d) / d.size))


def psnr(reference, test, roi=None, peak=None):
    """``20 log10(peak / RMSE)`` in dB; ``peak`` defaults to the reference ROI max.

    Identical images give ``inf``.
    """
    ref = _arr(reference)
    m = _roi(ref, roi)
    if peak is None:
        peak = ref[m].max()
    err = rmse(reference, test, m)
    if err == 0:
        return float("inf")
    return float(20 * np.log10(peak / err))


def ssim_map(a, b, data_range, window=8, k1=0.01, k2=0.03):
    """Local SSIM from ``window x window`` box statistics (population moments)."""
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = uniform_filter(a, window, mode="reflect")
    mu_b = uniform_filter(b, window, mode="reflect")
    saa = uniform_filter(a * a, window, mode="reflect") - mu_a * mu_a
    sbb = uniform_filter(b * b, window, mode="reflect") - mu_b * mu_b
    sab = uniform_filter(a * b, window, mode="reflect") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(reference, test, roi=None, data_range=None, window=8, k1=0.01, k2=0.03):
    """Mean local SSIM over the ROI.

    The dynamic range defaults to the reference's max minus min inside the
    ROI. Pass ``data_range`` explicitly for a symmetric comparison.
    """
    a, b = _pair(reference, test)
    m = _roi(a, roi)
    if data_range is None:
        data_range = float(a[m].max() - a[m].min())
    if data_range <= 0:
        data_range = 1.0
    if np.array_equal(a, b):
        return 1.0
    return float(np.clip(ssim_map(a, b, data_range, window, k1, k2)[m].mean(), -1.0, 1.0))
