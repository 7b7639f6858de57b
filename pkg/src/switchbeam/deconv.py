"""l1-regularized deconvolution of envelope images via monotone FISTA.

The "deconvolution" training target solves

    x_hat = argmin_x ||y - h * x||^2 + lambda * ||x||_1

where y is the DAS envelope image (linear scale, max-normalized before
solving) and h the system PSF. The solver is FISTA with the safe step
1 / L_h, L_h = 2 (sum|h|)^2, in its monotone variant: the accelerated
candidate is accepted only when it does not increase the objective, so the
objective trace is non-increasing by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_float_array, check_finite, check_nonnegative
from .envelope import BModeImage, log_compress
from .errors import InvalidInputError, SupportTooLargeError
from .geometry import ArrayGeometry, PulseModel


@dataclass
class Psf:
    """Point-spread-function kernel, axial rows by lateral columns."""

    kernel: np.ndarray

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)

    def validate(self) -> "Psf":
        k = self.kernel
        if k.ndim != 2:
            raise InvalidInputError(f"PSF kernel must be 2-D, got shape {k.shape}")
        if k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise InvalidInputError(f"PSF dimensions must be odd, got {k.shape}")
        check_finite(k, "PSF kernel")
        if not np.any(k):
            raise InvalidInputError("PSF kernel must not be all-zero")
        return self

    def abs_sum(self) -> float:
        return float(np.abs(self.kernel).sum())


@dataclass
class DeconvProblem:
    """One deconvolution instance: image, PSF, and solver knobs."""

    y: np.ndarray
    h: Psf
    lam: float = 0.02
    max_iters: int = 500
    tol: float = 1e-8

    def validate(self) -> "DeconvProblem":
        self.y = as_float_array(self.y, "y", ndim=2)
        if not np.all(np.isfinite(self.y)):
            raise InvalidInputError("y contains NaN or infinite values")
        self.h.validate()
        check_nonnegative(self.lam, "lam")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        return self


def convolve2d(x: np.ndarray, h) -> np.ndarray:
    """Same-size correlation-style convolution with zero boundary padding.

    out[i][j] = sum_{a,b} x[i + a - ca][j + b - cb] * k[a][b] with the
    kernel centered at (ca, cb) = ((K_a-1)/2, (K_l-1)/2) and out-of-range
    image samples read as 0. The kernel is not flipped.
    """
    x = as_float_array(x, "x", ndim=2)
    k = h.kernel if isinstance(h, Psf) else np.asarray(h, dtype=np.float64)
    ca, cb = (k.shape[0] - 1) // 2, (k.shape[1] - 1) // 2
    xp = np.pad(x, ((ca, ca), (cb, cb)))
    windows = sliding_window_view(xp, k.shape)
    return np.tensordot(windows, k, axes=2)


def _adjoint_convolve2d(r: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`convolve2d` in x: correlation with the flipped kernel."""
    return convolve2d(r, k[::-1, ::-1])


def estimate_psf(img: np.ndarray, support: tuple[int, int]) -> Psf:
    """Crude PSF estimate: central window of the image autocorrelation.

    Returns the support-sized center of the 2-D autocorrelation, normalized
    to unit peak. A constant image returns the flat all-ones kernel. This is
    a fallback for when the simulation PSF is unavailable.
    """
    img = as_float_array(img, "img", ndim=2)
    check_finite(img, "img")
    ka, kl = support
    if ka % 2 == 0 or kl % 2 == 0:
        raise InvalidInputError(f"support must be odd, got {support}")
    if ka > img.shape[0] or kl > img.shape[1]:
        raise SupportTooLargeError(
            f"support {support} exceeds image shape {img.shape}")
    if np.ptp(img) == 0.0:
        return Psf(kernel=np.ones((ka, kl)))
    acorr = fftconvolve(img, img[::-1, ::-1], mode="full")
    cr, cc = img.shape[0] - 1, img.shape[1] - 1
    win = acorr[cr - (ka - 1) // 2: cr + (ka - 1) // 2 + 1,
                cc - (kl - 1) // 2: cc + (kl - 1) // 2 + 1]
    return Psf(kernel=win / acorr[cr, cc])


def simulation_psf(geom: ArrayGeometry, pulse: PulseModel,
                   support: tuple[int, int] | None = None) -> Psf:
    """Known PSF of the simulator: pulse envelope x lateral beam profile.

    Axial taps sit on the depth-sample grid (one sample = 1/fs of two-way
    time), lateral taps on the scan-line grid with the simulator's Gaussian
    transmit-beam width (-6 dB width of one line pitch). Peak is 1. The
    default support covers the axial envelope to 3 tau and 5 lateral taps.
    """
    geom.validate()
    pulse.validate()
    tau = pulse.tau()
    if support is None:
        ka = 2 * int(math.ceil(3.0 * tau * geom.sampling_freq)) + 1
        support = (ka, 5)
    ka, kl = support
    if ka % 2 == 0 or kl % 2 == 0:
        raise InvalidInputError(f"support must be odd, got {support}")
    m = np.arange(ka) - (ka - 1) // 2
    axial = np.exp(-(m / geom.sampling_freq) ** 2 / (2.0 * tau ** 2))
    q = np.arange(kl) - (kl - 1) // 2
    sigma = geom.line_pitch() / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    lateral = np.exp(-(q * geom.line_pitch()) ** 2 / (2.0 * sigma ** 2))
    return Psf(kernel=np.outer(axial, lateral))


def soft_threshold(v, t):
    """Proximal map of the l1 term: sign(v) * max(|v| - t, 0).

    Works elementwise on scalars or arrays; t must be >= 0.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise InvalidInputError("threshold t must be >= 0")
    v_arr = np.asarray(v, dtype=np.float64)
    out = np.sign(v_arr) * np.maximum(np.abs(v_arr) - t_arr, 0.0)
    if np.isscalar(v) or v_arr.ndim == 0:
        return float(out)
    return out


def fista_deconvolve(p: DeconvProblem) -> tuple[np.ndarray, np.ndarray]:
    """Solve the l1 deblurring problem; returns (x_hat, objective_trace).

    Monotone FISTA from x0 = 0: the prox-gradient candidate at the
    accelerated point is kept only if its objective does not exceed the
    previous iterate's, so the recorded objective never increases. Stops
    when the relative objective change of an accepted step drops below
    ``tol`` or after ``max_iters`` iterations; rejected candidates (momentum
    overshoots) leave the objective unchanged and do not count as
    convergence.
    """
    p.validate()
    k = p.h.kernel
    y = p.y
    lipschitz = 2.0 * p.h.abs_sum() ** 2
    step = 1.0 / lipschitz

    def objective(x: np.ndarray) -> float:
        resid = y - convolve2d(x, k)
        return float(np.sum(resid * resid) + p.lam * np.abs(x).sum())

    x_prev = np.zeros_like(y)
    f_prev = objective(x_prev)
    v = x_prev
    t_k = 1.0
    trace = []
    last_f = f_prev
    for _ in range(p.max_iters):
        grad = 2.0 * _adjoint_convolve2d(convolve2d(v, k) - y, k)
        z = soft_threshold(v - step * grad, p.lam * step)
        f_z = objective(z)
        accepted = f_z <= f_prev
        if accepted:
            x, f_x = z, f_z
        else:
            x, f_x = x_prev, f_prev
        trace.append(f_x)
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k)) / 2.0
        v = x + (t_k / t_next) * (z - x) + ((t_k - 1.0) / t_next) * (x - x_prev)
        x_prev, f_prev, t_k = x, f_x, t_next
        if accepted and abs(last_f - f_x) <= p.tol * max(abs(last_f), 1e-30):
            break
        if accepted:
            last_f = f_x
    return x_prev, np.asarray(trace)


def deconv_target(das_envelope: np.ndarray, psf: Psf, lam: float = 0.02,
                  max_iters: int = 500, tol: float = 1e-8) -> BModeImage:
    """Deconvolution-style target: solve on the max-normalized envelope,
    then log-compress |x_hat|.

    An all-zero envelope short-circuits to the degenerate uniform-0-dB
    image of :func:`switchbeam.envelope.log_compress`.
    """
    env = as_float_array(das_envelope, "das_envelope", ndim=2)
    check_finite(env, "das_envelope")
    if np.any(env < 0):
        raise InvalidInputError("das_envelope must be >= 0")
    peak = float(env.max()) if env.size else 0.0
    if peak == 0.0:
        return log_compress(env)
    problem = DeconvProblem(y=env / peak, h=psf, lam=lam,
                            max_iters=max_iters, tol=tol)
    x_hat, _ = fista_deconvolve(problem)
    return log_compress(np.abs(x_hat))


class FistaDeconvolver(BaseEstimator, TransformerMixin):
    """Transformer producing deconvolution-style images from envelopes.

    Parameters
    ----------
    psf : Psf or None
        Known PSF; when None, ``fit`` estimates one from the training image
        autocorrelation with ``support``.
    lam, max_iters, tol : solver knobs (see :class:`DeconvProblem`).
    support : tuple of int
        Autocorrelation window used only for the estimation fallback.
    """

    def __init__(self, psf: Psf | None = None, lam: float = 0.02,
                 max_iters: int = 500, tol: float = 1e-8,
                 support: tuple[int, int] = (9, 5)):
        self.psf = psf
        self.lam = lam
        self.max_iters = max_iters
        self.tol = tol
        self.support = support

    def fit(self, X: np.ndarray, y=None):
        self.psf_ = self.psf if self.psf is not None else estimate_psf(
            np.asarray(X, dtype=np.float64), self.support)
        return self

    def transform(self, X: np.ndarray) -> BModeImage:
        if not hasattr(self, "psf_"):
            self.fit(X)
        return deconv_target(X, self.psf_, lam=self.lam,
                             max_iters=self.max_iters, tol=self.tol)
