"""Minimal tensor/layer toolkit with exact backpropagation.

Everything the switchable model needs, written directly on numpy arrays:
2-D convolution (stride 1, zero "same" or valid padding), ReLU/LeakyReLU,
fully-connected layers, per-channel instance statistics, the AdaIN
transform with its backward (including the path through sigma(u)), the
closed-form Gaussian optimal-transport map, and Adam.

Arrays are the tensor type; tests run layers in float64, the training code
uses float32. Every operation here is a pure function of its arguments;
only the Adam state is mutated, by its single owning training loop.

Conventions: feature maps are [C][H][W] (or [B][C][H][W] batched), dense
weights are [out][in], conv weights [C_out][C_in][k_h][k_w].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import as_float_array, check_finite
from .errors import (DegenerateChannelError, InvalidInputError,
                     ShapeMismatchError, SingularCovarianceError)

ADAIN_EPS = 1e-5
"""Guard on sigma(u): channels with smaller spread count as degenerate."""

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ChannelStats:
    """Per-channel population mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class GaussianMoments:
    """Mean vector and covariance matrix of a Gaussian measure."""

    mean: np.ndarray
    covariance: np.ndarray

    def validate(self) -> "GaussianMoments":
        m = as_float_array(self.mean, "mean", ndim=1)
        cov = as_float_array(self.covariance, "covariance", ndim=2)
        if cov.shape != (m.shape[0], m.shape[0]):
            raise ShapeMismatchError(
                f"covariance shape {cov.shape} does not match mean length "
                f"{m.shape[0]}")
        check_finite(m, "mean")
        check_finite(cov, "covariance")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise InvalidInputError("covariance must be symmetric (1e-12)")
        if np.linalg.eigvalsh(cov).min() < -1e-10:
            raise InvalidInputError(
                "covariance must be positive semi-definite (eigs >= -1e-10)")
        return self


@dataclass
class LayerGrad:
    """Gradients of one layer: input gradient plus parameter gradients."""

    dx: np.ndarray
    dw: np.ndarray | None = None
    db: np.ndarray | None = None


# ---------------------------------------------------------------------------
# convolution


def _pad_amount(kh: int, kw: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise InvalidInputError(
                f"'same' padding requires odd kernels, got {(kh, kw)}")
        return (kh - 1) // 2, (kw - 1) // 2
    if padding == "valid":
        return 0, 0
    raise InvalidInputError(f"padding must be 'same' or 'valid', got {padding!r}")


def _im2col(x4: np.ndarray, kh: int, kw: int, ph: int, pw: int):
    """Flatten all kernel-sized windows: [B, H'W', C*kh*kw] plus (H', W')."""
    if ph or pw:
        x4 = np.pad(x4, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(x4, (kh, kw), axis=(2, 3))      # B C H' W' kh kw
    b, c, hh, ww = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, hh * ww, c * kh * kw)
    return np.ascontiguousarray(cols), (hh, ww)


def _conv_raw(x4: np.ndarray, w: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Cross-correlation of a batch with explicit padding, bias-free."""
    o, c, kh, kw = w.shape
    cols, (hh, ww) = _im2col(x4, kh, kw, ph, pw)
    out = cols @ w.reshape(o, c * kh * kw).T                   # B, H'W', O
    return out.transpose(0, 2, 1).reshape(x4.shape[0], o, hh, ww)


def _check_conv_shapes(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if x.ndim not in (3, 4):
        raise ShapeMismatchError(
            f"input must be [C][H][W] or [B][C][H][W], got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeMismatchError(
            f"weights must be [C_out][C_in][k_h][k_w], got shape {w.shape}")
    cin = x.shape[-3]
    if w.shape[1] != cin:
        raise ShapeMismatchError(
            f"weight C_in {w.shape[1]} does not match input channels {cin}")
    if b.shape != (w.shape[0],):
        raise ShapeMismatchError(
            f"bias must have shape ({w.shape[0]},), got {b.shape}")


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   padding: str = "same") -> np.ndarray:
    """Stride-1 cross-correlation plus bias.

    ``padding`` is "same" (zero padding, odd kernels) or "valid". Accepts a
    single [C][H][W] map or a [B][C][H][W] batch.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    b = np.asarray(b)
    _check_conv_shapes(x, w, b)
    ph, pw = _pad_amount(w.shape[2], w.shape[3], padding)
    single = x.ndim == 3
    x4 = x[None] if single else x
    kh, kw = w.shape[2], w.shape[3]
    if x4.shape[2] + 2 * ph < kh or x4.shape[3] + 2 * pw < kw:
        raise ShapeMismatchError(
            f"kernel {(kh, kw)} larger than padded input "
            f"{(x4.shape[2] + 2 * ph, x4.shape[3] + 2 * pw)}")
    out = _conv_raw(x4, w, ph, pw) + b[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray,
                    padding: str = "same") -> LayerGrad:
    """Exact gradients of :func:`conv2d_forward`.

    Returns dx, dw, db for the given upstream gradient. dx is computed as a
    correlation of the (re-padded) upstream gradient with the spatially
    flipped, channel-transposed kernel, so everything stays matmul-shaped.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    grad_out = np.asarray(grad_out)
    _check_conv_shapes(x, w, np.zeros(w.shape[0], dtype=x.dtype))
    ph, pw = _pad_amount(w.shape[2], w.shape[3], padding)
    single = x.ndim == 3
    x4 = x[None] if single else x
    g4 = grad_out[None] if single else grad_out
    o, c, kh, kw = w.shape
    cols, (hh, ww) = _im2col(x4, kh, kw, ph, pw)
    if g4.shape != (x4.shape[0], o, hh, ww):
        raise ShapeMismatchError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"{(x4.shape[0], o, hh, ww)}")
    gmat = g4.transpose(0, 2, 3, 1).reshape(-1, o)             # B*H'W', O
    dw = (gmat.T @ cols.reshape(-1, c * kh * kw)).reshape(w.shape)
    db = g4.sum(axis=(0, 2, 3))
    w_flip = w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    dx4 = _conv_raw(g4, np.ascontiguousarray(w_flip), kh - 1 - ph, kw - 1 - pw)
    dx = dx4[0] if single else dx4
    return LayerGrad(dx=dx, dw=dw, db=db)


# ---------------------------------------------------------------------------
# activations


def relu(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient mask of relu; the derivative at exactly 0 is 1."""
    x = np.asarray(x)
    return np.asarray(grad_out) * (x >= 0)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    x = np.asarray(x)
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(x: np.ndarray, grad_out: np.ndarray,
                        slope: float = 0.2) -> np.ndarray:
    """Gradient mask of leaky_relu; the derivative at exactly 0 is 1."""
    x = np.asarray(x)
    return np.asarray(grad_out) * np.where(x >= 0, 1.0, slope)


# ---------------------------------------------------------------------------
# dense


def _check_dense_shapes(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if w.ndim != 2:
        raise ShapeMismatchError(f"dense weights must be 2-D, got {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ShapeMismatchError(
            f"input width {x.shape[-1]} does not match weight in-dim {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeMismatchError(
            f"bias must have shape ({w.shape[0]},), got {b.shape}")


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  activation: str = "linear") -> np.ndarray:
    """activation(W x + b) for a vector or a [B][in] batch of vectors."""
    x = np.asarray(x)
    w = np.asarray(w)
    b = np.asarray(b)
    _check_dense_shapes(x, w, b)
    z = x @ w.T + b
    if activation == "linear":
        return z
    if activation == "relu":
        return np.maximum(z, 0)
    raise InvalidInputError(f"activation must be 'linear' or 'relu', got {activation!r}")


def dense_backward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   grad_out: np.ndarray, activation: str = "linear") -> LayerGrad:
    """Exact gradients of :func:`dense_forward`."""
    x = np.asarray(x)
    w = np.asarray(w)
    b = np.asarray(b)
    _check_dense_shapes(x, w, b)
    g = np.asarray(grad_out)
    if activation == "relu":
        z = x @ w.T + b
        g = g * (z >= 0)
    elif activation != "linear":
        raise InvalidInputError(f"activation must be 'linear' or 'relu', got {activation!r}")
    if x.ndim == 1:
        return LayerGrad(dx=g @ w, dw=np.outer(g, x), db=g.copy())
    return LayerGrad(dx=g @ w, dw=g.T @ x, db=g.sum(axis=0))


# ---------------------------------------------------------------------------
# instance statistics and AdaIN


def instance_stats(u: np.ndarray) -> tuple[float, float]:
    """Population mean and std (divide by HW, not HW - 1) of a vector."""
    u = as_float_array(np.ravel(u), "u", ndim=1)
    if u.size < 1:
        raise InvalidInputError("instance_stats requires at least one element")
    mean = float(u.mean())
    std = float(np.sqrt(np.mean((u - mean) ** 2)))
    return mean, std


def channel_stats(u: np.ndarray) -> ChannelStats:
    """Population stats per channel of a [P][H][W] feature map."""
    u = as_float_array(u, "u", ndim=3)
    flat = u.reshape(u.shape[0], -1)
    mean = flat.mean(axis=1)
    std = np.sqrt(np.mean((flat - mean[:, None]) ** 2, axis=1))
    return ChannelStats(mean=mean, std=std)


def adain_transform(u: np.ndarray, target_mean: float, target_std: float,
                    clamp: bool = False):
    """AdaIN: (target_std / sigma(u)) * (u - mu(u)) + target_mean.

    Shape-preserving over any array (stats taken over all elements, i.e.
    one channel's H x W map or a plain vector). A channel with
    sigma(u) <= 1e-5 raises DegenerateChannelError unless ``clamp`` is
    True, in which case sigma is replaced by the guard value and the
    transform proceeds (training behavior; callers count occurrences).
    """
    if target_std < 0:
        raise InvalidInputError("target_std must be >= 0")
    u = np.asarray(u, dtype=np.float64)
    mu = u.mean()
    sigma = float(np.sqrt(np.mean((u - mu) ** 2)))
    if sigma <= ADAIN_EPS:
        if not clamp:
            raise DegenerateChannelError(
                f"channel spread {sigma:.3e} <= {ADAIN_EPS}; constant feature "
                "channel")
        sigma = ADAIN_EPS
    return (target_std / sigma) * (u - mu) + target_mean


def adain_backward(u: np.ndarray, target_mean: float, target_std: float,
                   grad_out: np.ndarray, clamp: bool = False):
    """Gradients of :func:`adain_transform` w.r.t. u and both targets.

    Returns (du, d_target_mean, d_target_std). The u-gradient includes the
    dependency of sigma(u) and mu(u) on u; when the clamp engaged in the
    forward pass, sigma is a constant and its path contributes nothing.

        du = (ts / sigma) * (g - mean(g) - uhat * <g, uhat> / (n sigma^2))
    """
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != u.shape:
        raise ShapeMismatchError(
            f"grad_out shape {g.shape} does not match u shape {u.shape}")
    n = u.size
    mu = u.mean()
    uhat = u - mu
    sigma = float(np.sqrt(np.mean(uhat ** 2)))
    clamped = sigma <= ADAIN_EPS
    if clamped and not clamp:
        raise DegenerateChannelError(
            f"channel spread {sigma:.3e} <= {ADAIN_EPS}; constant feature channel")
    sigma_eff = ADAIN_EPS if clamped else sigma
    d_tm = float(g.sum())
    d_ts = float((g * uhat).sum() / sigma_eff)
    du = (target_std / sigma_eff) * (g - g.mean())
    if not clamped:
        du -= (target_std / sigma_eff) * uhat * float(
            (g * uhat).sum()) / (n * sigma_eff ** 2)
    return du, d_tm, d_ts


# ---------------------------------------------------------------------------
# Gaussian optimal transport


def _sym_sqrt(mat: np.ndarray, inverse: bool = False) -> np.ndarray:
    """(Inverse) matrix square root of a symmetric PSD matrix via eigh."""
    w, q = np.linalg.eigh(mat)
    w = np.maximum(w, 0.0)
    root = np.sqrt(w)
    if inverse:
        root = 1.0 / root
    return (q * root) @ q.T


def ot_map_gaussian(src: GaussianMoments, dst: GaussianMoments,
                    u: np.ndarray) -> np.ndarray:
    """Closed-form optimal-transport map between Gaussian measures.

        T(u) = m_V + S_U^{-1/2} (S_U^{1/2} S_V S_U^{1/2})^{1/2} S_U^{-1/2} (u - m_U)

    Matrix square roots use symmetric eigendecomposition. The source
    covariance must be positive definite.
    """
    src.validate()
    dst.validate()
    u = as_float_array(u, "u", ndim=1)
    if u.shape[0] != src.mean.shape[0] or src.mean.shape != dst.mean.shape:
        raise ShapeMismatchError(
            f"dimension mismatch: u {u.shape}, src {src.mean.shape}, "
            f"dst {dst.mean.shape}")
    eigvals = np.linalg.eigvalsh(src.covariance)
    if eigvals.min() <= 1e-12 * max(1.0, float(eigvals.max())):
        raise SingularCovarianceError(
            "source covariance is singular; OT map undefined")
    root = _sym_sqrt(src.covariance)
    inv_root = _sym_sqrt(src.covariance, inverse=True)
    middle = _sym_sqrt(root @ dst.covariance @ root)
    transport = inv_root @ middle @ inv_root
    return dst.mean + transport @ (u - src.mean)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment accumulators plus the completed-step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def lr_schedule(step: int, lr0: float = 1e-4) -> float:
    """Exponentially decayed learning rate: lr0 * 0.999^(step / 1000)."""
    return lr0 * 0.999 ** (step / 1000.0)


def adam_step(params: dict, grads: dict, state: AdamState,
              lr0: float = 1e-4) -> dict:
    """One Adam update (beta1 0.9, beta2 0.999, eps 1e-8), in place.

    ``params`` and ``grads`` are dicts of same-shaped arrays; the learning
    rate follows :func:`lr_schedule` of the completed-step counter. Returns
    ``params`` for convenience.
    """
    lr = lr_schedule(state.step, lr0)
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params
