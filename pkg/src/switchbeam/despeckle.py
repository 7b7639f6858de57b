"""Non-local low-rank despeckle filter for log-envelope images.

The "Despeckle" training target filters the dB image in three stages, run
for a fixed number of iterations:

1. guidance map: a box-filtered copy of the current estimate, used as the
   patch-matching reference so speckle does not drive the matching;
2. block matching: for every stride-spaced anchor patch, the group_size
   most similar patches inside a search window;
3. weighted nuclear-norm shrinkage of each patch group (column means
   removed first, so a global dB offset passes through unchanged), then
   uniform scatter-add aggregation normalized by per-pixel hit counts.

All constants are pinned here; nothing is data-dependent except the
noise-level estimate that feeds the shrinkage weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_float_array, check_finite, check_odd
from .envelope import BModeImage
from .errors import InvalidInputError

_LAPLACIAN = np.array([[0.0, 1.0, 0.0],
                       [1.0, -4.0, 1.0],
                       [0.0, 1.0, 0.0]])

_SHRINK_EPS = 1e-6


@dataclass
class DespeckleParams:
    """Knobs of the non-local low-rank filter.

    ``noise_sigma`` (dB-domain noise std) and ``wnnm_c`` (shrinkage weight
    constant) default to None and are resolved per image: sigma by the
    robust Laplacian estimate, wnnm_c = 2.8 * sqrt(2) * sigma^2 *
    sqrt(group_size).
    """

    patch: int = 8
    stride: int = 4
    search_radius: int = 16
    group_size: int = 24
    wnnm_c: float | None = None
    noise_sigma: float | None = None
    iterations: int = 2

    def validate(self) -> "DespeckleParams":
        if self.patch > 2 * self.search_radius:
            raise InvalidInputError(
                f"patch ({self.patch}) must be <= 2 * search_radius "
                f"({2 * self.search_radius})")
        if self.group_size < 2:
            raise InvalidInputError("group_size must be >= 2")
        if self.stride < 1:
            raise InvalidInputError("stride must be >= 1")
        if self.patch < 1:
            raise InvalidInputError("patch must be >= 1")
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        return self

    def resolve(self, img: np.ndarray) -> "DespeckleParams":
        """Copy with noise_sigma and wnnm_c filled in for this image."""
        self.validate()
        sigma = self.noise_sigma
        if sigma is None:
            sigma = estimate_noise_sigma(img)
        c = self.wnnm_c
        if c is None:
            c = 2.8 * math.sqrt(2.0) * sigma ** 2 * math.sqrt(self.group_size)
        return replace(self, noise_sigma=sigma, wnnm_c=c)


def _as_db_matrix(img) -> np.ndarray:
    db = img.db if isinstance(img, BModeImage) else img
    db = as_float_array(db, "img", ndim=2)
    check_finite(db, "img")
    return db


def estimate_noise_sigma(img) -> float:
    """Robust dB-domain noise estimate: MAD of the Laplacian / 0.6745.

    The Laplacian uses replicate borders so constant offsets cancel
    everywhere, including at the image edge.
    """
    db = _as_db_matrix(img)
    lap = ndimage.convolve(db, _LAPLACIAN, mode="nearest")
    mad = np.median(np.abs(lap - np.median(lap)))
    return float(mad / 0.6745)


def guidance_map(img, window: int = 7) -> np.ndarray:
    """Box-filtered copy of the image (replicate borders).

    Used as the block-matching reference; local averaging keeps single
    speckle grains from dominating the patch distances.
    """
    check_odd(window, "window")
    db = _as_db_matrix(img)
    return ndimage.uniform_filter(db, size=window, mode="nearest")


def match_patches(guide: np.ndarray, anchor: tuple[int, int],
                  p: DespeckleParams) -> list[tuple[int, int]]:
    """Positions of the group_size patches most similar to the anchor.

    Similarity is the mean squared difference between patches of the
    guidance map, searched over every patch position whose top-left corner
    lies within ``search_radius`` of the anchor's. The anchor is always
    first; remaining slots follow increasing distance with (row, col)
    row-major tie-breaking.
    """
    p.validate()
    guide = as_float_array(guide, "guide", ndim=2)
    H, W = guide.shape
    P = p.patch
    r, c = anchor
    if not (0 <= r <= H - P and 0 <= c <= W - P):
        raise InvalidInputError(
            f"anchor {anchor} patch leaves the {H}x{W} image")
    windows = sliding_window_view(guide, (P, P))
    r0, r1 = max(0, r - p.search_radius), min(H - P, r + p.search_radius)
    c0, c1 = max(0, c - p.search_radius), min(W - P, c + p.search_radius)
    ref = windows[r, c]
    diff = windows[r0:r1 + 1, c0:c1 + 1] - ref
    dist = np.mean(diff * diff, axis=(2, 3))
    rows, cols = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1),
                             indexing="ij")
    rows, cols, dist = rows.ravel(), cols.ravel(), dist.ravel()
    if rows.size < p.group_size:
        raise InvalidInputError(
            f"search window holds {rows.size} candidates, need "
            f"group_size = {p.group_size}")
    order = np.lexsort((cols, rows, dist))
    out = [(r, c)]
    for i in order:
        pos = (int(rows[i]), int(cols[i]))
        if pos == (r, c):
            continue
        out.append(pos)
        if len(out) == p.group_size:
            break
    return out


def wnnm_shrink(group: np.ndarray, p: DespeckleParams) -> np.ndarray:
    """Weighted nuclear-norm shrinkage of a patch group.

    Column means are removed, singular values shrink by
    sigma_i <- max(sigma_i - wnnm_c / (sigma_i + 1e-6), 0) (large values
    shrink less), and the means are restored. Requires a resolved wnnm_c.
    """
    p.validate()
    if p.wnnm_c is None:
        raise InvalidInputError(
            "wnnm_c is unresolved; call DespeckleParams.resolve(img) first")
    g = as_float_array(group, "group", ndim=2)
    check_finite(g, "group")
    means = g.mean(axis=0, keepdims=True)
    centered = g - means
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    shrunk = np.maximum(s - p.wnnm_c / (s + _SHRINK_EPS), 0.0)
    return (u * shrunk) @ vt + means


def _anchor_grid(extent: int, patch: int, stride: int) -> range:
    return range(0, extent - patch + 1, stride)


def despeckle_target(img: BModeImage, p: DespeckleParams | None = None) -> BModeImage:
    """Non-local low-rank despeckle of a dB image.

    Runs ``p.iterations`` passes; each pass rebuilds the guidance map from
    the current estimate, shrinks every anchor's patch group, scatter-adds
    the results with uniform weights, and divides by per-pixel hit counts.
    Pixels the anchor grid never covers keep their previous value.
    """
    if p is None:
        p = DespeckleParams()
    db = _as_db_matrix(img)
    H, W = db.shape
    if H < p.patch or W < p.patch:
        raise InvalidInputError(
            f"image {H}x{W} is smaller than the patch size {p.patch}")
    rp = p.resolve(db)
    P = rp.patch
    est = db.copy()
    for _ in range(rp.iterations):
        guide = guidance_map(est)
        acc = np.zeros_like(est)
        cnt = np.zeros_like(est)
        for ar in _anchor_grid(H, P, rp.stride):
            for ac in _anchor_grid(W, P, rp.stride):
                coords = match_patches(guide, (ar, ac), rp)
                group = np.stack(
                    [est[r:r + P, c:c + P].ravel() for r, c in coords], axis=1)
                shrunk = wnnm_shrink(group, rp)
                for j, (r, c) in enumerate(coords):
                    acc[r:r + P, c:c + P] += shrunk[:, j].reshape(P, P)
                    cnt[r:r + P, c:c + P] += 1.0
        covered = cnt > 0
        est = np.where(covered, np.divide(acc, np.where(covered, cnt, 1.0)), est)
    ref = img.reference_max if isinstance(img, BModeImage) else 0.0
    return BModeImage(db=est, reference_max=ref)


class NonLocalLowRankDespeckler(BaseEstimator, TransformerMixin):
    """Transformer running the despeckle filter with fixed parameters.

    All constructor arguments mirror :class:`DespeckleParams`; None values
    for ``wnnm_c`` / ``noise_sigma`` are resolved per transformed image.
    """

    def __init__(self, patch: int = 8, stride: int = 4, search_radius: int = 16,
                 group_size: int = 24, wnnm_c: float | None = None,
                 noise_sigma: float | None = None, iterations: int = 2):
        self.patch = patch
        self.stride = stride
        self.search_radius = search_radius
        self.group_size = group_size
        self.wnnm_c = wnnm_c
        self.noise_sigma = noise_sigma
        self.iterations = iterations

    def _params(self) -> DespeckleParams:
        return DespeckleParams(
            patch=self.patch, stride=self.stride,
            search_radius=self.search_radius, group_size=self.group_size,
            wnnm_c=self.wnnm_c, noise_sigma=self.noise_sigma,
            iterations=self.iterations)

    def fit(self, X: BModeImage, y=None):
        return self

    def transform(self, X: BModeImage) -> BModeImage:
        return despeckle_target(X, self._params())
