"""Quantitative evaluation of sound-speed maps and reconstructions.

All statistics use the population (1/N) convention, matching the channel
normalization. Region masks restrict a metric to labeled subsets of the
field (layers, inclusions, background) for per-region reporting.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.ndimage as ndi

from .core import Image2D, SosMap
from .errors import (
    DegenerateClasses,
    EmptyMask,
    NoPeak,
    OpenProfile,
    ShapeMismatch,
)

SNR_THRESHOLD = 0.35


@dataclass(frozen=True)
class RegionMask:
    """Boolean region selector aligned to the evaluated map."""

    values: np.ndarray
    label: str = "Global"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ShapeMismatch(f"mask must be 2D, got ndim={v.ndim}")
        v = v.astype(bool)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def count(self) -> int:
        return int(self.values.sum())


def rmse(pred: SosMap, gt: SosMap, mask: Optional[RegionMask] = None) -> float:
    """Root mean square error in m/s, optionally restricted to a region."""
    if pred.values.shape != gt.values.shape:
        raise ShapeMismatch(
            f"map shapes differ: {pred.values.shape} vs {gt.values.shape}")
    diff = pred.values.astype(np.float64) - gt.values.astype(np.float64)
    if mask is not None:
        if mask.values.shape != diff.shape:
            raise ShapeMismatch("mask shape differs from the maps")
        if mask.count == 0:
            raise EmptyMask(f"region {mask.label!r} selects no pixels")
        diff = diff[mask.values]
    return float(np.sqrt((diff * diff).mean()))


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    x = np.arange(window) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = g[:, None] * g[None, :]
    return k / k.sum()


def local_ssim(a: Image2D, b: Image2D, roi: Optional[RegionMask] = None,
               window: int = 11, k1: float = 0.01, k2: float = 0.03,
               L: float = 1.0) -> float:
    """Mean structural similarity over windows centered in the ROI.

    Windows are Gaussian-weighted (std 1.5). Only centers whose full window
    fits inside the image contribute, so a border strip of (window-1)/2
    pixels is ignored.
    """
    if a.values.shape != b.values.shape:
        raise ShapeMismatch(
            f"image shapes differ: {a.values.shape} vs {b.values.shape}")
    half = window // 2
    nx, nz = a.values.shape
    if nx < window or nz < window:
        raise ShapeMismatch(f"images smaller than the {window}x{window} window")
    if roi is None:
        inside = np.ones((nx, nz), bool)
    else:
        if roi.values.shape != a.values.shape:
            raise ShapeMismatch("roi shape differs from the images")
        if roi.count == 0:
            raise EmptyMask(f"region {roi.label!r} selects no pixels")
        inside = roi.values
    valid = inside[half:nx - half, half:nz - half]
    if not valid.any():
        raise EmptyMask("no window fits inside the image within the ROI")

    x = a.values.astype(np.float64)
    y = b.values.astype(np.float64)
    kern = _gaussian_kernel(window, 1.5)

    def win_mean(f):
        return ndi.correlate(f, kern, mode="constant")[half:nx - half,
                                                       half:nz - half]

    mu_x = win_mean(x)
    mu_y = win_mean(y)
    var_x = win_mean(x * x) - mu_x * mu_x
    var_y = win_mean(y * y) - mu_y * mu_y
    cov = win_mean(x * y) - mu_x * mu_y
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
    return float(ssim_map[valid].mean())


def _refine_peak_height(prof: np.ndarray, i: int) -> float:
    """Parabolic subsample peak height through three points."""
    if 0 < i < prof.size - 1:
        y0, y1, y2 = prof[i - 1], prof[i], prof[i + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom < 0:
            delta = 0.5 * (y0 - y2) / denom
            if abs(delta) <= 1.0:
                return float(y1 - 0.25 * (y0 - y2) * delta)
    return float(prof[i])


def _half_crossing(prof: np.ndarray, start: int, step: int, half: float) -> float:
    """Fractional index where the profile falls through half, walking from
    the peak in the given direction."""
    i = start
    while 0 <= i + step < prof.size:
        j = i + step
        if prof[j] <= half:
            # linear interpolation between i (above) and j (at/below)
            frac = (prof[i] - half) / (prof[i] - prof[j])
            return i + step * frac
        i = j
    raise OpenProfile("half-maximum crossing not found inside the image")


def lateral_fwhm(img: Image2D, seed_point: Tuple[float, float]) -> float:
    """Full width at half maximum, in mm, of the lateral profile through the
    intensity peak nearest seed_point (searched within 1 mm)."""
    grid = img.grid
    v = img.values.astype(np.float64)
    si, sj = grid.world_to_grid(seed_point)
    r = max(1, int(round(1e-3 / grid.dx)))
    i0, i1 = max(0, si - r), min(grid.nx, si + r + 1)
    j0, j1 = max(0, sj - r), min(grid.nz, sj + r + 1)
    patch = v[i0:i1, j0:j1]
    if patch.max() <= patch.min():
        raise NoPeak(f"no local maximum within 1 mm of {seed_point}")
    pi, pj = np.unravel_index(int(np.argmax(patch)), patch.shape)
    pi += i0
    pj += j0

    prof = v[:, pj]
    height = _refine_peak_height(prof, pi)
    half = 0.5 * height
    left = _half_crossing(prof, pi, -1, half)
    right = _half_crossing(prof, pi, +1, half)
    return float((right - left) * grid.dx * 1e3)


def snr_db(img: Image2D, threshold: float = SNR_THRESHOLD) -> float:
    """20 log10(mean(signal) / std(background)) with the signal class being
    all pixels at or above the threshold (population std, [0,1] images)."""
    v = img.values.astype(np.float64)
    signal = v[v >= threshold]
    background = v[v < threshold]
    if signal.size == 0 or background.size == 0:
        raise DegenerateClasses(
            f"threshold {threshold} leaves signal={signal.size} "
            f"background={background.size} pixels")
    sigma = background.std()
    if sigma == 0.0:
        raise DegenerateClasses("background has zero variance")
    return float(20.0 * np.log10(signal.mean() / sigma))
