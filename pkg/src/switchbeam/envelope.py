"""Envelope detection, log compression, display thresholding, PGM output.

Image convention: B-mode matrices are [N][L] (depth rows, scan-line
columns, shallow depth at row 0), i.e. the transpose of the [L][N] rf-sum
produced by :func:`switchbeam.beamform.das`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_float_array, check_finite, check_positive
from .errors import InvalidInputError, LengthNotPowerOfTwoError
from .beamform import RfCube, das, rf_to_aperture


@dataclass
class BModeImage:
    """Log-compressed image in dB relative to its own maximum.

    Attributes
    ----------
    db : ndarray
        [N][L] matrix of 20*log10(envelope / max).
    reference_max : float
        20*log10 of the linear envelope maximum used for normalization
        (0.0 for the degenerate all-zero input).
    """

    db: np.ndarray
    reference_max: float

    def validate(self) -> "BModeImage":
        check_finite(self.db, "BModeImage db")
        if self.db.ndim != 2:
            raise InvalidInputError(
                f"BModeImage db must be 2-D, got shape {self.db.shape}")
        return self


def _check_power_of_two(n: int) -> None:
    if n < 1 or (n & (n - 1)) != 0:
        raise LengthNotPowerOfTwoError(f"FFT length must be a power of two, got {n}")


def fft(x) -> np.ndarray:
    """DFT X[k] = sum_n x[n] exp(-2 pi i k n / N) for power-of-two N."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1:
        raise InvalidInputError(f"fft expects a vector, got shape {x.shape}")
    _check_power_of_two(x.shape[0])
    return np.fft.fft(x)


def ifft(x) -> np.ndarray:
    """Inverse of :func:`fft` (same power-of-two length requirement)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1:
        raise InvalidInputError(f"ifft expects a vector, got shape {x.shape}")
    _check_power_of_two(x.shape[0])
    return np.fft.ifft(x)


def _next_power_of_two(n: int) -> int:
    m = 1
    while m < n:
        m *= 2
    return m


def hilbert_envelope(rf) -> np.ndarray:
    """Envelope of a real RF trace via the analytic signal.

    Zero-pads to the next power of two, builds the analytic signal with a
    one-sided spectrum (positive frequencies doubled, DC and Nyquist kept,
    negative frequencies zeroed), and returns the magnitude truncated back
    to the input length.
    """
    rf = as_float_array(rf, "rf", ndim=1)
    check_finite(rf, "rf")
    n = rf.shape[0]
    if n == 0:
        return rf.copy()
    m = _next_power_of_two(n)
    spec = fft(np.pad(rf, (0, m - n)))
    gain = np.zeros(m)
    gain[0] = 1.0
    if m > 1:
        gain[m // 2] = 1.0
        gain[1:m // 2] = 2.0
    analytic = ifft(spec * gain)
    return np.abs(analytic[:n])


def envelope_image(rf_sum: np.ndarray) -> np.ndarray:
    """Envelope of an [L][N] rf-sum, returned as an [N][L] linear image.

    The Hilbert transform runs along the time (depth) axis of each line.
    """
    rf_sum = as_float_array(rf_sum, "rf_sum", ndim=2)
    env = np.stack([hilbert_envelope(line) for line in rf_sum], axis=0)
    return env.T


def log_compress(env: np.ndarray) -> BModeImage:
    """20*log10 compression normalized to the global envelope maximum.

    Zeros are floored at 1e-10 of the maximum before the log. An all-zero
    input maps to a uniform 0 dB image with reference_max = 0.
    """
    env = as_float_array(env, "env", ndim=2)
    check_finite(env, "env")
    if np.any(env < 0):
        raise InvalidInputError("envelope values must be >= 0")
    peak = float(env.max()) if env.size else 0.0
    if peak == 0.0:
        return BModeImage(db=np.zeros_like(env), reference_max=0.0)
    db = 20.0 * np.log10(np.maximum(env, 1e-10 * peak) / peak)
    return BModeImage(db=db, reference_max=20.0 * np.log10(peak))


def display_threshold(img: BModeImage, dynamic_range: float = 60.0) -> BModeImage:
    """Clamp the image into the display window [-dynamic_range, 0] dB."""
    img.validate()
    check_positive(dynamic_range, "dynamic_range")
    return BModeImage(db=np.clip(img.db, -dynamic_range, 0.0),
                      reference_max=img.reference_max)


def render_pgm(img: BModeImage, dynamic_range: float = 60.0) -> bytes:
    """Serialize a display-thresholded image as a binary PGM (P5).

    Pixel mapping: byte = round_half_up(255 * (db + dr) / dr), so -dr dB is
    0 and 0 dB is 255. Rows run from shallow (n = 0) to deep depth.
    """
    img.validate()
    check_positive(dynamic_range, "dynamic_range")
    db = img.db
    if np.any(db < -dynamic_range) or np.any(db > 0.0):
        raise InvalidInputError(
            "render_pgm requires a display-thresholded image; call "
            "display_threshold first")
    levels = np.floor(255.0 * (db + dynamic_range) / dynamic_range + 0.5)
    pixels = np.clip(levels, 0, 255).astype(np.uint8)
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + pixels.tobytes(order="C")


def das_bmode(cube: RfCube) -> BModeImage:
    """Classical DAS B-mode: delay, extract, sum, envelope, log compress.

    Returns the unthresholded dB image; apply :func:`display_threshold`
    before rendering.
    """
    rf_sum = das(rf_to_aperture(cube))
    return log_compress(envelope_image(rf_sum))
