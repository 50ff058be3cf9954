"""2D parallel-beam CT: phantoms, Siddon projector, low-dose simulation, FBP.

Coordinates are in mm with the origin at the image centre, ``x`` to the right
and ``y`` up (row 0 is the top row). The ray for angle ``theta`` and detector
offset ``t`` is ``t * (cos, sin) + s * (-sin, cos)``, so a point projects to
``t = x cos(theta) + y sin(theta)``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse

from .imaging import ConfigError, Image

MU_WATER = 0.02  # 1/mm
HU_SCALE = MU_WATER / 1000.0  # attenuation per modified-HU unit


@dataclass(frozen=True)
class Geometry:
    n_angles: int
    n_detectors: int
    detector_spacing: float = 1.0

    def __post_init__(self):
        if self.n_angles < 1 or self.n_detectors < 1:
            raise ConfigError("n_angles and n_detectors must be >= 1")
        if not self.detector_spacing > 0:
            raise ConfigError("detector_spacing must be positive")

    @property
    def angles(self):
        return np.arange(self.n_angles) * (np.pi / self.n_angles)

    @property
    def offsets(self):
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2) * self.detector_spacing

    @property
    def n_rays(self):
        return self.n_angles * self.n_detectors

    @classmethod
    def covering(cls, width, height, pixel_size, n_angles):
        """Geometry whose detector spans the image diagonal at pixel pitch."""
        n_det = int(np.ceil(np.hypot(width, height))) + 2
        return cls(n_angles, n_det, pixel_size)


@dataclass
class SinogramSet:
    """Post-log data ``y`` with diagonal weights, stored angle-major."""

    y: np.ndarray
    weights: np.ndarray
    geometry: Geometry

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        n = self.geometry.n_rays
        if self.y.size != n or self.weights.size != n:
            raise ConfigError(
                f"sinogram length {self.y.size}/{self.weights.size} != {n} rays")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.y)):
            raise ValueError("weights must be nonnegative and data finite")


# ---------------------------------------------------------------- phantoms

# (intensity, a, b, x0, y0, phi in degrees), unit square [-1, 1]^2
SHEPP_LOGAN = (
    (2.00, 0.6900, 0.9200, 0.00, 0.0000, 0),
    (-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18),
    (0.01, 0.2100, 0.2500, 0.00, 0.3500, 0),
    (0.01, 0.0460, 0.0460, 0.00, 0.1000, 0),
    (0.01, 0.0460, 0.0460, 0.00, -0.1000, 0),
    (0.01, 0.0460, 0.0230, -0.08, -0.6050, 0),
    (0.01, 0.0230, 0.0230, 0.00, -0.6060, 0),
    (0.01, 0.0230, 0.0460, 0.06, -0.6050, 0),
)


def _unit_grid(width, height):
    # pixel-centre coordinates scaled so the larger side spans [-1, 1]
    half = max(width, height) / 2
    xs = (np.arange(width) - (width - 1) / 2) / half
    ys = ((height - 1) / 2 - np.arange(height)) / half
    return np.meshgrid(xs, ys)


def make_phantom(kind, width, height, pixel_size=1.0, value=1000.0, radius=0.8):
    """Synthetic test object in modified HU.

    ``shepp_logan`` uses the original ellipse table scaled by 1000, so the
    skull is 2000 and brain tissue about 1020. ``disk`` fills a centred disk of
    ``radius`` (fraction of the half-width) with ``value``; ``uniform`` fills
    every pixel with ``value``.
    """
    xx, yy = _unit_grid(width, height)
    if kind == "uniform":
        data = np.full((height, width), float(value))
    elif kind == "disk":
        data = np.where(xx ** 2 + yy ** 2 <= radius ** 2, float(value), 0.0)
    elif kind == "shepp_logan":
        data = np.zeros((height, width))
        for rho, a, b, x0, y0, phi in SHEPP_LOGAN:
            c, s = np.cos(np.radians(phi)), np.sin(np.radians(phi))
            u = (xx - x0) * c + (yy - y0) * s
            v = -(xx - x0) * s + (yy - y0) * c
            data[(u / a) ** 2 + (v / b) ** 2 <= 1] += 1000.0 * rho
    else:
        raise ConfigError(f"unknown phantom kind {kind!r}")
    return Image(data, pixel_size)


# --------------------------------------------------------------- projector

def _siddon_angle(theta, offsets, width, height, ps):
    """Intersection lengths of every ray of one view with the pixel grid."""
    c, s = np.cos(theta), np.sin(theta)
    ux, uy = -s, c
    px, py = offsets * c, offsets * s
    xl = (np.arange(width + 1) - width / 2) * ps
    yl = (np.arange(height + 1) - height / 2) * ps
    with np.errstate(divide="ignore", invalid="ignore"):
        ax = (xl[None, :] - px[:, None]) / ux
        ay = (yl[None, :] - py[:, None]) / uy
    big = 1e30
    if abs(ux) < 1e-12:
        inside = (px > xl[0]) & (px < xl[-1])
        ax = np.where(inside[:, None], np.array([-big, big])[None, :], np.nan)
    if abs(uy) < 1e-12:
        inside = (py > yl[0]) & (py < yl[-1])
        ay = np.where(inside[:, None], np.array([-big, big])[None, :], np.nan)
    smin = np.maximum(np.min(ax, axis=1), np.min(ay, axis=1))
    smax = np.minimum(np.max(ax, axis=1), np.max(ay, axis=1))
    hit = np.isfinite(smin) & np.isfinite(smax) & (smax > smin)
    smin, smax = np.where(hit, smin, 0.0), np.where(hit, smax, 0.0)
    knots = np.concatenate([ax, ay, smin[:, None], smax[:, None]], axis=1)
    knots = np.where(np.isfinite(knots), knots, smin[:, None])
    knots = np.clip(knots, smin[:, None], smax[:, None])
    knots.sort(axis=1)
    seg = np.diff(knots, axis=1)
    mid = 0.5 * (knots[:, 1:] + knots[:, :-1])
    mx = px[:, None] + mid * ux
    my = py[:, None] + mid * uy
    col = np.floor((mx - xl[0]) / ps).astype(np.int64)
    row = np.floor((yl[-1] - my) / ps).astype(np.int64)
    keep = (seg > 1e-9 * ps) & (col >= 0) & (col < width) & (row >= 0) & (row < height)
    ray = np.broadcast_to(np.arange(offsets.size)[:, None], seg.shape)
    return ray[keep], row[keep] * width + col[keep], seg[keep]


@lru_cache(maxsize=8)
def system_matrix(geo, width, height, pixel_size):
    """Sparse ``(n_rays, width*height)`` matrix of exact intersection lengths (mm).

    Rows are angle-major: ray ``k * n_detectors + d`` is detector ``d`` at
    angle ``k``. The result is cached; treat it as read-only.
    """
    if width < 1 or height < 1:
        raise ConfigError("image dimensions must be positive")
    rows, cols, vals = [], [], []
    offsets = geo.offsets
    for k, theta in enumerate(geo.angles):
        r, c, v = _siddon_angle(theta, offsets, width, height, pixel_size)
        rows.append(r + k * geo.n_detectors)
        cols.append(c)
        vals.append(v)
    a = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geo.n_rays, width * height))
    a = a.tocsr()
    a.sum_duplicates()
    return a


def forward_project(img, geo):
    """Line integrals of ``img`` (value x mm) for every ray, angle-major."""
    a = system_matrix(geo, img.width, img.height, img.pixel_size)
    return a @ img.data.reshape(-1)


def back_project(sino, geo, width, height, pixel_size=1.0):
    """Exact adjoint of :func:`forward_project`."""
    sino = np.asarray(sino, dtype=np.float64).reshape(-1)
    if sino.size != geo.n_rays:
        raise ConfigError(f"sinogram length {sino.size} != {geo.n_rays} rays")
    a = system_matrix(geo, width, height, pixel_size)
    return Image((a.T @ sino).reshape(height, width), pixel_size)


# ------------------------------------------------------------- acquisition

def simulate_lowdose(img, geo, incident_photons=1e4, seed=0):
    """Poisson transmission data for an image in modified HU.

    Counts ``N ~ Poisson(I0 exp(-A mu))``; the returned data are
    ``y = log(I0 / max(N, 1))`` with weights ``w = N``. ``incident_photons =
    inf`` gives the noiseless line integrals with unit weights.
    """
    if not incident_photons > 0:
        raise ConfigError("incident_photons must be positive")
    if seed is None:
        raise ConfigError("a seed is required")
    line = forward_project(img, geo) * HU_SCALE
    if np.isinf(incident_photons):
        return SinogramSet(line, np.ones_like(line), geo)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(incident_photons * np.exp(-line)).astype(np.float64)
    y = np.log(incident_photons / np.maximum(counts, 1.0))
    return SinogramSet(y, counts, geo)


def ramp_filter(proj, spacing):
    """Ram-Lak filtering of each row of ``proj`` (spatial kernel, zero-padded)."""
    n = proj.shape[-1]
    size = max(64, int(2 ** np.ceil(np.log2(2 * n))))
    k = np.concatenate([np.arange(0, size // 2 + 1), np.arange(-size // 2 + 1, 0)])
    h = np.zeros(size)
    h[0] = 0.25 / spacing ** 2
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    kernel = np.real(np.fft.fft(h))
    padded = np.fft.fft(proj, n=size, axis=-1) * kernel
    return np.real(np.fft.ifft(padded, axis=-1))[..., :n] * spacing


def fbp(sino, width, height, pixel_size=1.0):
    """Ram-Lak filtered backprojection, returned in modified HU."""
    geo = sino.geometry
    proj = sino.y.reshape(geo.n_angles, geo.n_detectors)
    q = ramp_filter(proj, geo.detector_spacing)
    half = np.arange(width) - (width - 1) / 2
    xs = half * pixel_size
    ys = ((height - 1) / 2 - np.arange(height)) * pixel_size
    xx, yy = np.meshgrid(xs, ys)
    offsets = geo.offsets
    out = np.zeros((height, width))
    for theta, qa in zip(geo.angles, q):
        t = xx * np.cos(theta) + yy * np.sin(theta)
        out += np.interp(t, offsets, qa, left=0.0, right=0.0)
    out *= np.pi / geo.n_angles
    return Image(out / HU_SCALE, pixel_size)


def majorizer_diag(a, weights):
    """Diagonal ``A^T W A 1`` (majorizes ``A^T W A`` for nonnegative ``A``).

    Entries no weighted ray reaches are floored at ``1e-12`` times the largest
    entry, or at ``1e-12`` when every entry is zero.
    """
    d = a.T @ (np.asarray(weights, dtype=np.float64) * (a @ np.ones(a.shape[1])))
    peak = d.max(initial=0.0)
    return np.maximum(d, 1e-12 * peak if peak > 0 else 1e-12)


def majorizer_image(geo, weights, width, height, pixel_size=1.0, scale=1.0):
    """Image-shaped :func:`majorizer_diag` for the scaled system ``scale * A``."""
    a = system_matrix(geo, width, height, pixel_size)
    if scale != 1.0:
        a = a * scale
    return Image(majorizer_diag(a, weights).reshape(height, width), pixel_size)
