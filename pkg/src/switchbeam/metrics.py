"""Image-quality metrics on dB images.

Contrast recovery (CR), contrast-to-noise ratio (CNR), generalized CNR
(GCNR, the histogram-overlap measure), a -6 dB lateral-width estimator, and
a speckle signal-to-noise helper. All statistics use the population (1/n)
convention and are computed on the unthresholded dB image.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from ._validation import check_finite
from .envelope import BModeImage
from .errors import (EmptyRegionError, InvalidInputError, NoPeakError,
                     ShapeMismatchError, ZeroMeanError, ZeroVarianceError)
from .geometry import ArrayGeometry, RegionSpec

SPECKLE_SNR_MAX = sys.float_info.max


@dataclass
class RegionMask:
    """Boolean target/background pixel selections over one image."""

    target: np.ndarray
    background: np.ndarray

    def validate(self) -> "RegionMask":
        self.target = np.asarray(self.target)
        self.background = np.asarray(self.background)
        for name, mask in (("target", self.target),
                           ("background", self.background)):
            if mask.dtype != np.bool_:
                raise InvalidInputError(f"{name} mask must be boolean")
            if mask.ndim != 2:
                raise ShapeMismatchError(f"{name} mask must be 2-D")
        if self.target.shape != self.background.shape:
            raise ShapeMismatchError("target and background shapes differ")
        if not self.target.any():
            raise EmptyRegionError("target region selects no pixels")
        if not self.background.any():
            raise EmptyRegionError("background region selects no pixels")
        if np.any(self.target & self.background):
            raise InvalidInputError("target and background regions overlap")
        return self


@dataclass
class RegionStats:
    """Mean/std (population) and histogram of one region's pixel values."""

    mean: float
    std: float
    histogram: np.ndarray


def _db_matrix(img) -> np.ndarray:
    if isinstance(img, BModeImage):
        return img.db
    db = np.asarray(img, dtype=np.float64)
    if db.ndim != 2:
        raise ShapeMismatchError(f"image must be 2-D, got {db.shape}")
    return db


def _region_values(img, mask: RegionMask) -> tuple[np.ndarray, np.ndarray]:
    db = _db_matrix(img)
    mask.validate()
    if mask.target.shape != db.shape:
        raise ShapeMismatchError(
            f"mask shape {mask.target.shape} does not match image {db.shape}")
    return db[mask.target], db[mask.background]


def region_stats(values: np.ndarray, bins: int, value_range) -> RegionStats:
    hist, _ = np.histogram(values, bins=bins, range=value_range)
    return RegionStats(mean=float(values.mean()),
                       std=float(values.std()), histogram=hist)


def cr(img, mask: RegionMask) -> float:
    """Contrast recovery: absolute difference of the region means, in dB."""
    t, b = _region_values(img, mask)
    return abs(float(t.mean()) - float(b.mean()))


def cnr(img, mask: RegionMask) -> float:
    """Contrast-to-noise ratio |mu_t - mu_b| / sqrt(var_t + var_b)."""
    t, b = _region_values(img, mask)
    var = float(t.var() + b.var())
    if var == 0.0:
        raise ZeroVarianceError("both regions are constant; CNR is undefined")
    return abs(float(t.mean()) - float(b.mean())) / np.sqrt(var)


def gcnr(img, mask: RegionMask, bins: int = 256) -> float:
    """Generalized CNR: one minus the overlap of the two value histograms.

    Both regions are binned on one shared grid spanning the union of their
    value ranges; each histogram is normalized to a probability mass
    function and the overlap is the binwise minimum sum. Identical value
    populations therefore score 0; populations whose ranges are separated
    by at least one bin width score exactly 1.
    """
    if bins < 1:
        raise InvalidInputError("bins must be >= 1")
    t, b = _region_values(img, mask)
    check_finite(t, "target values")
    check_finite(b, "background values")
    lo = min(t.min(), b.min())
    hi = max(t.max(), b.max())
    if lo == hi:
        return 0.0
    pt = np.histogram(t, bins=bins, range=(lo, hi))[0] / t.size
    pb = np.histogram(b, bins=bins, range=(lo, hi))[0] / b.size
    return float(1.0 - np.minimum(pt, pb).sum())


def fwhm_lateral(img, row: int, level: float = -6.0) -> float:
    """Width (in scan lines) of the row's peak at ``level`` dB below it.

    The crossings on both sides of the unique maximum are located by linear
    interpolation; a side whose profile never falls below the threshold is
    clipped at the image edge. Rows with a tied or flat maximum raise
    NoPeakError.
    """
    db = _db_matrix(img)
    if not 0 <= row < db.shape[0]:
        raise InvalidInputError(
            f"row {row} outside image with {db.shape[0]} depth rows")
    if level >= 0:
        raise InvalidInputError("level must be negative dB")
    profile = db[row]
    peak_val = profile.max()
    peaks = np.flatnonzero(profile == peak_val)
    if peaks.size != 1:
        raise NoPeakError(
            f"row {row} has {peaks.size} equal maxima; need exactly one")
    peak = int(peaks[0])
    threshold = peak_val + level

    def crossing(above: int, below: int) -> float:
        """Interpolated position between a sample above and one below."""
        hi, lo = profile[above], profile[below]
        if not np.isfinite(lo):
            return float(above)
        return above + (threshold - hi) / (lo - hi) * (below - above)

    left = 0.0
    for i in range(peak, 0, -1):
        if profile[i - 1] < threshold:
            left = crossing(i, i - 1)
            break
    right = float(profile.size - 1)
    for i in range(peak, profile.size - 1):
        if profile[i + 1] < threshold:
            right = crossing(i, i + 1)
            break
    return right - left


@dataclass
class SpeckleSnr:
    """Speckle SNR value; ``saturated`` marks the zero-variance sentinel."""

    value: float
    saturated: bool = False


def speckle_snr(img, region: np.ndarray) -> SpeckleSnr:
    """|mean| / std of one region of a dB image.

    A constant region has infinite SNR; that case returns the sentinel
    SPECKLE_SNR_MAX with ``saturated=True`` instead of dividing by zero.
    """
    db = _db_matrix(img)
    region = np.asarray(region)
    if region.dtype != np.bool_:
        raise InvalidInputError("region mask must be boolean")
    if region.shape != db.shape:
        raise ShapeMismatchError(
            f"region shape {region.shape} does not match image {db.shape}")
    values = db[region]
    if values.size == 0:
        raise EmptyRegionError("region selects no pixels")
    mean = float(values.mean())
    if mean == 0.0:
        raise ZeroMeanError("region mean is zero; SNR is undefined")
    std = float(values.std())
    if std == 0.0:
        return SpeckleSnr(value=SPECKLE_SNR_MAX, saturated=True)
    return SpeckleSnr(value=abs(mean) / std, saturated=False)


# ---------------------------------------------------------------------------
# geometry-space mask construction


def region_pixels(geom: ArrayGeometry, n_depth: int,
                  region: RegionSpec) -> np.ndarray:
    """Boolean [N][L] mask of the pixels inside a phantom region.

    Pixel (n, l) maps to axial depth c*n/(2*fs) and the lateral position of
    scan line l.
    """
    region.validate()
    n = np.arange(n_depth, dtype=np.float64)
    z = (n * geom.sound_speed / (2.0 * geom.sampling_freq))[:, None]
    x = geom.scanline_positions()[None, :]
    if region.shape == "rectangle":
        return ((np.abs(x - region.center_lateral) <= region.width / 2)
                & (np.abs(z - region.center_axial) <= region.height / 2))
    dx = x - region.center_lateral
    dz = z - region.center_axial
    return dx * dx + dz * dz <= region.radius ** 2


def mask_from_regions(geom: ArrayGeometry, n_depth: int, target: RegionSpec,
                      background: RegionSpec) -> RegionMask:
    """RegionMask from two phantom-space regions (overlap pixels excluded
    from neither: overlapping specs are rejected by validation)."""
    return RegionMask(target=region_pixels(geom, n_depth, target),
                      background=region_pixels(geom, n_depth, background)
                      ).validate()
