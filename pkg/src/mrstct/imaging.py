"""Image container and patch operators.

Patches are ``patch_side x patch_side`` windows vectorized row-major and
stacked as the columns of a ``(p, n_patches)`` array. Window top-left corners
are enumerated row by row with step ``stride``; when the step does not land on
the far edge an extra window flush with the boundary is appended, so every
pixel is covered and nothing wraps around.
"""
from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    """Raised for inconsistent patch, geometry or run configuration."""


@dataclass
class Image:
    """2D scalar field in modified HU (air 0, water 1000).

    ``data`` has shape ``(height, width)``; row 0 is the top of the image.
    """

    data: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ConfigError(f"image data must be 2D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")
        if not self.pixel_size > 0:
            raise ConfigError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class PatchConfig:
    patch_side: int = 8
    stride: int = 1

    @property
    def p(self):
        return self.patch_side * self.patch_side

    def validate(self, width, height):
        if not 1 <= self.stride <= self.patch_side:
            raise ConfigError(
                f"stride must lie in [1, patch_side={self.patch_side}], got {self.stride}")
        if self.patch_side > min(width, height):
            raise ConfigError(
                f"patch_side {self.patch_side} exceeds image size {width}x{height}")


def _corners(n, side, stride):
    pos = np.arange(0, n - side + 1, stride)
    if pos[-1] != n - side:
        pos = np.append(pos, n - side)
    return pos


def patch_corners(cfg, width, height):
    """Top-left row and column positions of the patch windows."""
    cfg.validate(width, height)
    return (_corners(height, cfg.patch_side, cfg.stride),
            _corners(width, cfg.patch_side, cfg.stride))


def n_patches(cfg, width, height):
    rows, cols = patch_corners(cfg, width, height)
    return rows.size * cols.size


def _as_array(img):
    return img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


def extract_patches(img, cfg):
    """Return the ``(p, n_patches)`` matrix of vectorized patches of ``img``.

    Column ``j`` holds the ``j``-th window (corners enumerated row-major),
    flattened row-major within the window.
    """
    x = _as_array(img)
    height, width = x.shape
    rows, cols = patch_corners(cfg, width, height)
    s = cfg.patch_side
    windows = np.lib.stride_tricks.sliding_window_view(x, (s, s))
    windows = windows[np.ix_(rows, cols)]
    return windows.reshape(rows.size * cols.size, s * s).T.copy()


def accumulate_patches(pm, cfg, width, height):
    """Adjoint of :func:`extract_patches`: sum each column back into its window."""
    pm = np.asarray(pm, dtype=np.float64)
    rows, cols = patch_corners(cfg, width, height)
    s = cfg.patch_side
    if pm.shape != (s * s, rows.size * cols.size):
        raise ConfigError(
            f"patch matrix shape {pm.shape} does not match "
            f"{(s * s, rows.size * cols.size)} for a {width}x{height} image")
    out = np.zeros((height, width))
    blocks = pm.reshape(s, s, rows.size, cols.size)
    # windows sharing an offset never overlap, so fancy-index += is race-free
    for di in range(s):
        for dj in range(s):
            out[np.ix_(rows + di, cols + dj)] += blocks[di, dj]
    return out


def overlap_counts(cfg, width, height):
    """Number of patches covering each pixel (the diagonal of sum_j P_j^T P_j)."""
    rows, cols = patch_corners(cfg, width, height)
    s = cfg.patch_side
    cover_r = np.zeros(height)
    cover_c = np.zeros(width)
    for r in rows:
        cover_r[r:r + s] += 1
    for c in cols:
        cover_c[c:c + s] += 1
    return np.outer(cover_r, cover_c)
