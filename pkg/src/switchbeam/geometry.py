"""Linear-array geometry, scatterer phantoms, and SLA RF simulation.

The simulator synthesizes single-line-acquisition (SLA) channel data: for
each scan line one focused transmit fires, and the active receive aperture
records echoes from every scatterer. The model is deliberately cheap:

* two-way time of flight ``(d_tx + d_rx) / c`` with ``d_tx`` the scatterer
  depth and ``d_rx`` the scatterer-to-element distance,
* a lateral Gaussian transmit-beam weight whose -6 dB width is one
  scan-line pitch,
* amplitude spreading ``1 / max(d_rx, 1 mm)``,
* no frequency-dependent attenuation, elevation, or element directivity.

Elements outside the active aperture of a line are written as exact zeros,
which produces the dark triangular regions characteristic of walked-aperture
channel data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._validation import (check_finite, check_in_range, check_nonnegative,
                          check_positive)
from .errors import EmptyPhantomError, InvalidInputError
from .rng import SplitMix64

R_MIN = 1e-3
"""Near-field clamp for the spreading term, meters."""

_BEAM_WEIGHT_CUTOFF = 1e-8
"""Transmit-beam weights below this are treated as zero contributions."""


@dataclass
class ArrayGeometry:
    """Linear probe geometry and acquisition grid.

    Attributes
    ----------
    element_count : int
        Total probe elements E.
    pitch : float
        Element spacing in meters.
    sound_speed : float
        Speed of sound c in m/s.
    sampling_freq : float
        RF sampling rate fs in Hz.
    center_freq : float
        Transmit center frequency f0 in Hz.
    aperture_size : int
        Active receive elements J per scan line.
    scan_lines : int
        Number of scan lines L (one transmit event each).
    depth_samples : int
        Samples per trace N.
    focal_depth : float
        Transmit focus depth in meters.
    """

    element_count: int
    pitch: float
    sound_speed: float
    sampling_freq: float
    center_freq: float
    aperture_size: int
    scan_lines: int
    depth_samples: int
    focal_depth: float

    def validate(self) -> "ArrayGeometry":
        if self.aperture_size > self.element_count:
            raise InvalidInputError(
                f"aperture_size {self.aperture_size} exceeds element_count "
                f"{self.element_count}")
        if self.aperture_size < 1:
            raise InvalidInputError("aperture_size must be >= 1")
        if self.scan_lines < 1:
            raise InvalidInputError("scan_lines must be >= 1")
        if self.depth_samples < 1:
            raise InvalidInputError("depth_samples must be >= 1")
        if not self.sampling_freq > 2 * self.center_freq:
            raise InvalidInputError(
                "sampling_freq must exceed twice center_freq (Nyquist)")
        check_positive(self.pitch, "pitch")
        check_positive(self.sound_speed, "sound_speed")
        check_positive(self.center_freq, "center_freq")
        check_positive(self.focal_depth, "focal_depth")
        return self

    def element_positions(self) -> np.ndarray:
        """Lateral element centers in meters, array centered on 0."""
        e = np.arange(self.element_count, dtype=np.float64)
        return (e - (self.element_count - 1) / 2.0) * self.pitch

    def aperture_offsets(self) -> np.ndarray:
        """First active element d_l per scan line (aperture walking).

        d_l = clamp(round(l * (E - J) / (L - 1)), 0, E - J) with
        round-half-up; a single scan line gets the centered aperture.
        """
        span = self.element_count - self.aperture_size
        if self.scan_lines == 1:
            return np.array([span // 2], dtype=np.int64)
        l = np.arange(self.scan_lines, dtype=np.float64)
        raw = np.floor(l * span / (self.scan_lines - 1) + 0.5)
        return np.clip(raw, 0, span).astype(np.int64)

    def scanline_positions(self) -> np.ndarray:
        """Lateral position of each scan line: its active aperture's center."""
        d = self.aperture_offsets().astype(np.float64)
        center = (d + (self.aperture_size - 1) / 2.0) * self.pitch
        return center - (self.element_count - 1) / 2.0 * self.pitch

    def line_pitch(self) -> float:
        """Nominal lateral spacing between adjacent scan lines, meters.

        Falls back to the element pitch when the aperture cannot walk
        (E == J) or there is a single line.
        """
        span = self.element_count - self.aperture_size
        if self.scan_lines > 1 and span > 0:
            return span * self.pitch / (self.scan_lines - 1)
        return self.pitch

    def depth_grid(self) -> np.ndarray:
        """Depth z_n = n * c / (2 fs) of each sample, meters."""
        n = np.arange(self.depth_samples, dtype=np.float64)
        return n * self.sound_speed / (2.0 * self.sampling_freq)


@dataclass
class RegionSpec:
    """A labeled phantom region that seeds diffuse scatterers.

    ``shape`` is "rectangle" (uses ``width``/``height``) or "disk" (uses
    ``radius``); positions are meters, ``density`` is scatterers per mm^2,
    ``echogenicity`` multiplies the standard-normal scatterer amplitudes.
    An ``anechoic`` region contributes no scatterers of its own and removes
    every scatterer that falls inside it (a cyst punched out of the
    surrounding tissue).
    """

    label: str
    shape: str
    center_lateral: float
    center_axial: float
    echogenicity: float
    density: float
    width: float = 0.0
    height: float = 0.0
    radius: float = 0.0
    anechoic: bool = False

    def validate(self) -> "RegionSpec":
        if self.shape not in ("rectangle", "disk"):
            raise InvalidInputError(
                f"region {self.label!r}: shape must be 'rectangle' or 'disk', "
                f"got {self.shape!r}")
        check_nonnegative(self.density, f"region {self.label!r} density")
        check_nonnegative(self.echogenicity, f"region {self.label!r} echogenicity")
        if self.anechoic and self.density != 0.0:
            raise InvalidInputError(
                f"region {self.label!r}: an anechoic region must have "
                f"density 0")
        if self.shape == "rectangle":
            check_positive(self.width, f"region {self.label!r} width")
            check_positive(self.height, f"region {self.label!r} height")
        else:
            check_positive(self.radius, f"region {self.label!r} radius")
        return self

    def area_mm2(self) -> float:
        if self.shape == "rectangle":
            return self.width * self.height * 1e6
        return math.pi * self.radius ** 2 * 1e6

    def contains(self, lateral, axial) -> np.ndarray:
        """Elementwise test whether (lateral, axial) points lie inside."""
        lateral = np.asarray(lateral, dtype=np.float64)
        axial = np.asarray(axial, dtype=np.float64)
        if self.shape == "rectangle":
            return ((np.abs(lateral - self.center_lateral) <= self.width / 2)
                    & (np.abs(axial - self.center_axial) <= self.height / 2))
        dx = lateral - self.center_lateral
        dz = axial - self.center_axial
        return dx * dx + dz * dz <= self.radius ** 2


@dataclass
class Phantom:
    """Point scatterers plus diffuse-scatterer region specs.

    ``scatterers`` is an array of shape (K, 3) holding (lateral, axial,
    amplitude) rows in meters / meters / dimensionless.
    """

    scatterers: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 3), dtype=np.float64))
    regions: list[RegionSpec] = field(default_factory=list)

    def __post_init__(self):
        self.scatterers = np.asarray(self.scatterers, dtype=np.float64)
        if self.scatterers.size == 0:
            self.scatterers = self.scatterers.reshape(0, 3)
        if self.scatterers.ndim != 2 or self.scatterers.shape[1] != 3:
            raise InvalidInputError(
                f"scatterers must have shape (K, 3), got {self.scatterers.shape}")

    def validate(self) -> "Phantom":
        check_finite(self.scatterers, "scatterers")
        if self.scatterers.shape[0] and np.any(self.scatterers[:, 1] < 0):
            raise InvalidInputError("scatterer axial positions must be >= 0")
        for region in self.regions:
            region.validate()
        return self


@dataclass
class PulseModel:
    """Gaussian-modulated sinusoid transmit pulse.

    The pulse is cos(2 pi f0 t) * exp(-t^2 / (2 tau^2)) truncated to
    |t| <= length_cycles / (2 f0). tau = sqrt(2 ln 2) / (pi * fb * f0)
    makes the envelope's two-sided -6 dB spectral width equal
    fractional_bandwidth * f0.
    """

    center_freq: float
    fractional_bandwidth: float = 0.6
    length_cycles: float = 4.0

    def validate(self) -> "PulseModel":
        check_positive(self.center_freq, "center_freq")
        check_in_range(self.fractional_bandwidth, "fractional_bandwidth", 0.0, 2.0)
        check_positive(self.length_cycles, "length_cycles")
        return self

    def tau(self) -> float:
        """Gaussian-envelope time constant, seconds."""
        return math.sqrt(2.0 * math.log(2.0)) / (
            math.pi * self.fractional_bandwidth * self.center_freq)

    def half_support(self) -> float:
        """Half the pulse's finite support, seconds."""
        return self.length_cycles / (2.0 * self.center_freq)


def gaussian_pulse(model: PulseModel, t):
    """Evaluate the transmit pulse at time(s) ``t`` (seconds).

    Accepts a scalar or an ndarray; returns the same shape. Exactly zero
    outside the finite support, peak amplitude 1 at t = 0.
    """
    model.validate()
    t_arr = np.asarray(t, dtype=np.float64)
    tau = model.tau()
    value = np.cos(2.0 * np.pi * model.center_freq * t_arr) \
        * np.exp(-t_arr ** 2 / (2.0 * tau ** 2))
    value = np.where(np.abs(t_arr) <= model.half_support(), value, 0.0)
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(value)
    return value


def sample_diffuse_scatterers(phantom: Phantom, seed: int) -> Phantom:
    """Return a phantom augmented with diffuse scatterers for every region.

    Each region contributes round(density * area_mm2) scatterers placed
    uniformly inside it, with amplitudes drawn standard-normal and scaled by
    the region's echogenicity. Regions are processed in list order from a
    single SplitMix64 stream, so the result is bit-reproducible given the
    seed. Anechoic regions are applied last: every scatterer inside one is
    removed. The input phantom is not modified.
    """
    phantom.validate()
    rng = SplitMix64(seed)
    rows = [phantom.scatterers]
    for region in phantom.regions:
        count = int(round(region.density * region.area_mm2()))
        if count == 0:
            continue
        pts = np.empty((count, 3), dtype=np.float64)
        for i in range(count):
            if region.shape == "rectangle":
                lat = rng.uniform(region.center_lateral - region.width / 2,
                                  region.center_lateral + region.width / 2)
                ax = rng.uniform(region.center_axial - region.height / 2,
                                 region.center_axial + region.height / 2)
            else:
                r = region.radius * math.sqrt(rng.uniform())
                theta = rng.uniform(0.0, 2.0 * math.pi)
                lat = region.center_lateral + r * math.cos(theta)
                ax = region.center_axial + r * math.sin(theta)
            pts[i] = (lat, ax, rng.normal() * region.echogenicity)
        rows.append(pts)
    merged = np.concatenate(rows, axis=0) if len(rows) > 1 else rows[0]
    for region in phantom.regions:
        if region.anechoic and merged.shape[0]:
            inside = region.contains(merged[:, 0], merged[:, 1])
            merged = merged[~inside]
    return replace(phantom, scatterers=merged)


def simulate_rf(geom: ArrayGeometry, phantom: Phantom, pulse: PulseModel):
    """Synthesize the SLA channel-data cube X of shape [L][N][E].

    For scan line l at lateral position x_l, sample n at t_n = n / fs and
    element e:

        X[l][n][e] = sum_k a_k * w_tx(k, l) * pulse(t_n - tau) / max(d_rx, 1mm)
        tau = (z_k + d_rx) / c,   d_rx = ||scatterer_k - element_e||

    w_tx is the lateral Gaussian transmit weight (-6 dB width of one
    scan-line pitch). Elements outside [d_l, d_l + J) stay exactly 0.

    Returns
    -------
    RfCube
        With ``geom`` attached (see :mod:`switchbeam.beamform`).
    """
    from .beamform import RfCube

    geom.validate()
    phantom.validate()
    pulse.validate()
    scat = phantom.scatterers
    if scat.shape[0] == 0:
        raise EmptyPhantomError(
            "phantom has no scatterers; sample_diffuse_scatterers first or "
            "add explicit points")

    L, N, E, J = (geom.scan_lines, geom.depth_samples,
                  geom.element_count, geom.aperture_size)
    xe = geom.element_positions()
    xl = geom.scanline_positions()
    offsets = geom.aperture_offsets()
    c = geom.sound_speed
    fs = geom.sampling_freq
    sigma = geom.line_pitch() / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    half = pulse.half_support()
    # window of samples a single echo can touch: ceil covers both rounding ends
    win = int(math.ceil(2.0 * half * fs)) + 2

    xk = scat[:, 0]
    zk = scat[:, 1]
    ak = scat[:, 2]

    data = np.zeros((L, N, E), dtype=np.float64)
    for l in range(L):
        w_tx = np.exp(-((xk - xl[l]) ** 2) / (2.0 * sigma ** 2))
        keep = w_tx > _BEAM_WEIGHT_CUTOFF
        if not np.any(keep):
            continue
        xs, zs, amps = xk[keep], zk[keep], ak[keep] * w_tx[keep]
        elems = np.arange(offsets[l], offsets[l] + J)
        d_rx = np.sqrt((xs[:, None] - xe[elems][None, :]) ** 2
                       + zs[:, None] ** 2)                        # (K, J)
        tau = (zs[:, None] + d_rx) / c
        gain = amps[:, None] / np.maximum(d_rx, R_MIN)
        n0 = np.ceil((tau - half) * fs).astype(np.int64)          # (K, J)
        n_idx = n0[:, :, None] + np.arange(win)[None, None, :]    # (K, J, win)
        t = n_idx / fs - tau[:, :, None]
        vals = gain[:, :, None] * gaussian_pulse(pulse, t)
        ok = (n_idx >= 0) & (n_idx < N)
        flat = n_idx[ok] * E + np.broadcast_to(
            elems[None, :, None], n_idx.shape)[ok]
        np.add.at(data[l].reshape(-1), flat, vals[ok])
    return RfCube(data=data, geom=geom)
