"""Channel-data pipeline X -> Y -> Z and the DAS reference beamformer.

Axis conventions, fixed throughout the package:

==============  =======================  ============================
tensor          shape                    meaning
==============  =======================  ============================
RfCube          [L][N][E]                raw channel data X
DelayedCube     [L][N][E]                time-of-flight corrected Y
ApertureCube    [L][N][J]                active-aperture extract Z
input slab      [J][L][D]                network input around depth n
output line     [L]                      per-depth network output
==============  =======================  ============================

L scan lines, N depth samples, E probe elements, J active elements,
D odd depth-context size (default 7).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_finite, check_odd
from .errors import InvalidInputError, ShapeMismatchError
from .geometry import ArrayGeometry

DEPTH_CONTEXT = 7
"""Default number of depth planes stacked into a network input slab."""


@dataclass
class RfCube:
    """Raw RF channel data X with its acquisition geometry."""

    data: np.ndarray
    geom: ArrayGeometry

    def validate(self) -> "RfCube":
        expected = (self.geom.scan_lines, self.geom.depth_samples,
                    self.geom.element_count)
        if tuple(self.data.shape) != expected:
            raise ShapeMismatchError(
                f"RfCube data shape {tuple(self.data.shape)} does not match "
                f"geometry [L={expected[0]}][N={expected[1]}][E={expected[2]}]")
        check_finite(self.data, "RfCube data")
        return self


@dataclass
class DelayedCube:
    """Time-of-flight corrected cube Y, same layout as its source X."""

    data: np.ndarray
    geom: ArrayGeometry

    def validate(self) -> "DelayedCube":
        expected = (self.geom.scan_lines, self.geom.depth_samples,
                    self.geom.element_count)
        if tuple(self.data.shape) != expected:
            raise ShapeMismatchError(
                f"DelayedCube data shape {tuple(self.data.shape)} does not "
                f"match geometry {expected}")
        check_finite(self.data, "DelayedCube data")
        return self


@dataclass
class ApertureCube:
    """Active-aperture cube Z plus the per-line element offsets d_l."""

    data: np.ndarray
    offsets: np.ndarray
    geom: ArrayGeometry

    def validate(self) -> "ApertureCube":
        L, N, J = (self.geom.scan_lines, self.geom.depth_samples,
                   self.geom.aperture_size)
        if tuple(self.data.shape) != (L, N, J):
            raise ShapeMismatchError(
                f"ApertureCube data shape {tuple(self.data.shape)} does not "
                f"match geometry [L={L}][N={N}][J={J}]")
        if self.offsets.shape != (L,):
            raise ShapeMismatchError(
                f"offsets must have shape ({L},), got {self.offsets.shape}")
        span = self.geom.element_count - J
        if np.any(self.offsets < 0) or np.any(self.offsets > span):
            raise InvalidInputError(
                f"offsets must lie in [0, {span}]")
        check_finite(self.data, "ApertureCube data")
        return self


def delay_correct(cube: RfCube) -> DelayedCube:
    """Apply dynamic receive focusing delays to every trace.

    For depth sample n (depth z_n = n c / (2 fs)) and an element at lateral
    distance dx from the scan line, the echo from depth z_n arrives at

        t = (z_n + sqrt(z_n^2 + dx^2)) / c

    so Y[l][n][e] = X[l][t * fs][e], with the fractional sample index
    resolved by linear interpolation and indices past N - 1 reading as 0.

    The index is computed in sample units, n/2 + hypot(n/2, dx * fs / c),
    which is algebraically the same expression and makes the dx = 0 case
    land on integer indices exactly (traces on the line copy unchanged).
    """
    cube.validate()
    geom = cube.geom
    L, N, E = cube.data.shape
    xe = geom.element_positions()
    xl = geom.scanline_positions()
    ns = np.arange(N, dtype=np.float64)[:, None] / 2.0      # (N, 1)
    out = np.empty_like(cube.data)
    for l in range(L):
        dx_s = np.abs(xe - xl[l]) * geom.sampling_freq / geom.sound_speed
        t_idx = ns + np.hypot(ns, dx_s[None, :])            # (N, E)
        i0 = np.floor(t_idx).astype(np.int64)
        frac = t_idx - i0
        lo_ok = i0 <= N - 1
        hi_ok = i0 + 1 <= N - 1
        src = cube.data[l]
        a = np.where(lo_ok, src[np.minimum(i0, N - 1), np.arange(E)[None, :]], 0.0)
        b = np.where(hi_ok, src[np.minimum(i0 + 1, N - 1), np.arange(E)[None, :]], 0.0)
        out[l] = a * (1.0 - frac) + b * frac
    return DelayedCube(data=out, geom=geom)


def extract_aperture(cube: DelayedCube) -> ApertureCube:
    """Gather the J active elements per line: Z[l][n][i] = Y[l][n][i + d_l]."""
    cube.validate()
    geom = cube.geom
    offsets = geom.aperture_offsets()
    J = geom.aperture_size
    cols = offsets[:, None] + np.arange(J)[None, :]          # (L, J)
    data = np.take_along_axis(cube.data, cols[:, None, :], axis=2)
    return ApertureCube(data=data, offsets=offsets, geom=geom)


def das(cube: ApertureCube) -> np.ndarray:
    """Delay-and-sum: the channel mean u[l][n] = (1/J) sum_i Z[l][n][i].

    Returns the rf-sum matrix with axes [L][N].
    """
    cube.validate()
    return cube.data.mean(axis=2)


def make_input_slab(cube: ApertureCube, n: int, context: int = DEPTH_CONTEXT) -> np.ndarray:
    """Stack ``context`` depth planes around plane ``n`` as a network input.

    Planes n - (context-1)/2 ... n + (context-1)/2 are gathered with
    replicate padding at the depth boundaries. The result has axes
    [J][L][context] so it can feed the network as [channels][height][width].
    """
    cube.validate()
    N = cube.data.shape[1]
    if not 0 <= n < N:
        raise InvalidInputError(f"depth index {n} outside [0, {N})")
    check_odd(context, "context")
    half = (context - 1) // 2
    idx = np.clip(np.arange(n - half, n + half + 1), 0, N - 1)
    # [L][context][J] -> [J][L][context]
    return cube.data[:, idx, :].transpose(2, 0, 1)


def all_input_slabs(cube: ApertureCube, context: int = DEPTH_CONTEXT) -> np.ndarray:
    """Input slabs for every depth plane at once, shape [N][J][L][context].

    Uses the same clamped-index gather as :func:`make_input_slab`.
    """
    cube.validate()
    check_odd(context, "context")
    N = cube.data.shape[1]
    half = (context - 1) // 2
    idx = np.clip(np.arange(N)[:, None] + np.arange(-half, half + 1)[None, :],
                  0, N - 1)                                  # (N, context)
    # data[:, idx, :] -> [L][N][context][J] -> [N][J][L][context]
    return cube.data[:, idx, :].transpose(1, 3, 0, 2)


def rf_to_aperture(cube: RfCube) -> ApertureCube:
    """Convenience composition: delay correction then aperture extraction."""
    return extract_aperture(delay_correct(cube))


class DasBeamformer(BaseEstimator, TransformerMixin):
    """Stateless transformer running the classical DAS pipeline.

    ``transform`` maps an :class:`RfCube` to an unthresholded B-mode image
    (log-compressed envelope of the DAS rf-sum).
    """

    def fit(self, X: RfCube, y=None):
        return self

    def transform(self, X: RfCube):
        from .envelope import das_bmode
        return das_bmode(X)
