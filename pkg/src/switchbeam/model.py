"""The switchable convolutional beamformer and its training machinery.

The generator G maps a standardized input slab [J][L][D] to one dB scan
line of length L. It is a stack of nine stride-1 convolution blocks:
odd-numbered blocks are "blue" (two 3x3 conv + ReLU layers), even-numbered
"yellow" (one 3x3 conv + LeakyReLU). Block 5 is the bottleneck; exactly one
AdaIN layer sits on its output and replaces each channel's (mean, std) with
values produced by the code generator F. The head is a (1 x D) valid
convolution that collapses the depth-context axis to a single plane.

F maps the scalar style code c through fully-connected layers
1 -> 16 -> 64 -> 2P; the first P outputs are the AdaIN means (linear), the
last P the variances (ReLU, so they stay nonnegative).

One network serves four output styles; the style is chosen at inference by
feeding the corresponding c. Codes: DAS -1.0, Despeckle -0.5,
Deconvolution 0.5, DeconvDespeckle 1.0.
"""

from __future__ import annotations

import struct
import time
import warnings
import zlib
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import neural
from ._validation import as_float_array, check_finite, check_odd
from .beamform import ApertureCube, all_input_slabs, das, make_input_slab
from .deconv import Psf, deconv_target
from .despeckle import DespeckleParams, despeckle_target
from .envelope import BModeImage, display_threshold, envelope_image, log_compress
from .errors import (CorruptFileError, DegenerateChannelWarning,
                     InvalidInputError, NonFiniteLossError,
                     ShapeMismatchError)
from .neural import (AdamState, adam_step, conv2d_backward, conv2d_forward,
                     dense_backward, dense_forward, leaky_relu,
                     leaky_relu_backward, relu, relu_backward)
from .rng import SplitMix64

LEAKY_SLOPE = 0.2
TARGET_DB_MIN = -120.0
TARGET_DB_MAX = 20.0
_VAR_EPS = 1e-12
_WEIGHTS_MAGIC = b"SWBF"
_WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class StyleCode:
    """Scalar style selector and its label."""

    c: float
    label: str


STYLES: tuple[StyleCode, ...] = (
    StyleCode(-1.0, "das"),
    StyleCode(-0.5, "despeckle"),
    StyleCode(0.5, "deconvolution"),
    StyleCode(1.0, "deconv_despeckle"),
)

STYLE_BY_LABEL = {s.label: s for s in STYLES}


def style_by_label(label: str) -> StyleCode:
    try:
        return STYLE_BY_LABEL[label]
    except KeyError:
        raise InvalidInputError(
            f"unknown style {label!r}; expected one of "
            f"{sorted(STYLE_BY_LABEL)}") from None


@dataclass
class AdaInCode:
    """Per-channel target mean and variance emitted by the code generator."""

    mean: np.ndarray
    variance: np.ndarray

    def validate(self) -> "AdaInCode":
        self.mean = as_float_array(self.mean, "mean", ndim=1,
                                   dtype=self.mean.dtype)
        self.variance = as_float_array(self.variance, "variance", ndim=1,
                                       dtype=self.variance.dtype)
        if self.mean.shape != self.variance.shape:
            raise ShapeMismatchError("mean and variance lengths differ")
        check_finite(self.mean, "mean")
        check_finite(self.variance, "variance")
        if np.any(self.variance < 0):
            raise InvalidInputError("variance must be >= 0")
        return self

    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.variance, _VAR_EPS))


@dataclass
class ModelConfig:
    """Architecture sizes; defaults are the desk-scale configuration."""

    in_channels: int = 16
    width: int = 16
    bottleneck: int = 32
    depth_context: int = 7

    def validate(self) -> "ModelConfig":
        for name in ("in_channels", "width", "bottleneck", "depth_context"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        check_odd(self.depth_context, "depth_context")
        return self


def _block_plan(cfg: ModelConfig) -> list[tuple[str, str, int, int]]:
    """(name, kind, c_in, c_out) for the nine blocks; block5 is bottleneck."""
    plan = []
    cin = cfg.in_channels
    for i in range(1, 10):
        kind = "blue" if i % 2 == 1 else "yellow"
        cout = cfg.bottleneck if i == 5 else cfg.width
        plan.append((f"block{i}", kind, cin, cout))
        cin = cout
    return plan


def _expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor name -> shape table for a given architecture."""
    shapes: dict[str, tuple[int, ...]] = {}
    for name, kind, cin, cout in _block_plan(cfg):
        shapes[f"{name}.conv1.w"] = (cout, cin, 3, 3)
        shapes[f"{name}.conv1.b"] = (cout,)
        if kind == "blue":
            shapes[f"{name}.conv2.w"] = (cout, cout, 3, 3)
            shapes[f"{name}.conv2.b"] = (cout,)
    shapes["head.w"] = (1, cfg.width, 1, cfg.depth_context)
    shapes["head.b"] = (1,)
    shapes["codegen.fc1.w"] = (16, 1)
    shapes["codegen.fc1.b"] = (16,)
    shapes["codegen.fc2.w"] = (64, 16)
    shapes["codegen.fc2.b"] = (64,)
    shapes["codegen.out.w"] = (2 * cfg.bottleneck, 64)
    shapes["codegen.out.b"] = (2 * cfg.bottleneck,)
    return shapes


@dataclass
class TrainingSample:
    """One (input slab, per-style target lines) training row.

    ``input`` is the standardized slab; the removed (mean, std) are kept so
    the raw slab can be recovered.
    """

    input: np.ndarray
    targets: dict[str, np.ndarray]
    input_mean: float
    input_std: float
    frame: int = 0
    depth: int = 0

    def validate(self) -> "TrainingSample":
        for style in STYLES:
            if style.label not in self.targets:
                raise InvalidInputError(
                    f"sample is missing target {style.label!r}")
        check_finite(self.input, "input")
        for label, line in self.targets.items():
            check_finite(np.asarray(line), f"target {label!r}")
        return self


@dataclass
class TrainConfig:
    """Training hyperparameters (epochs, batch, lr0, patience)."""

    epochs: int = 100
    batch: int = 32
    lr0: float = 1e-4
    patience: int = 20
    seed: int = 0
    styles: tuple[str, ...] = tuple(s.label for s in STYLES)
    bias_warm_start: bool = True


@dataclass
class InferenceResult:
    """Styled B-mode image plus per-depth-plane wall-clock seconds."""

    image: BModeImage
    plane_seconds: np.ndarray


def standardize_slab(slab: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Zero-mean/unit-std scaling of one slab; constant slabs get std 1."""
    mean = float(slab.mean())
    std = float(slab.std())
    if std == 0.0:
        std = 1.0
    return (slab - mean) / std, mean, std


class SwitchableModel:
    """Parameter container with explicit forward/backward passes.

    ``params`` maps tensor names to arrays (float32 by default; tests build
    float64 copies via :meth:`astype`). ``codes`` holds the materialized
    AdaIN codes written into weight files so inference can skip F.
    ``adain_clamp_count`` counts degenerate-channel clamps seen outside
    training.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray],
                 codes: dict[str, AdaInCode] | None = None):
        self.config = config.validate()
        self.params = params
        self.codes = codes or {}
        self.adain_clamp_count = 0

    # -- construction ------------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig | None = None, seed: int = 0,
             dtype=np.float32) -> "SwitchableModel":
        """Fresh model with uniform(+-sqrt(6/(fan_in+fan_out))) weights."""
        cfg = (config or ModelConfig()).validate()
        rng = SplitMix64(seed)

        def uniform_init(shape, fan_in, fan_out):
            s = np.sqrt(6.0 / (fan_in + fan_out))
            flat = np.array([rng.uniform(-s, s) for _ in range(int(np.prod(shape)))])
            return flat.reshape(shape).astype(dtype)

        params: dict[str, np.ndarray] = {}

        def add_conv(name, cin, cout, kh, kw):
            params[f"{name}.w"] = uniform_init((cout, cin, kh, kw),
                                               cin * kh * kw, cout * kh * kw)
            params[f"{name}.b"] = np.zeros(cout, dtype=dtype)

        def add_dense(name, nin, nout):
            params[f"{name}.w"] = uniform_init((nout, nin), nin, nout)
            params[f"{name}.b"] = np.zeros(nout, dtype=dtype)

        for name, kind, cin, cout in _block_plan(cfg):
            add_conv(f"{name}.conv1", cin, cout, 3, 3)
            if kind == "blue":
                add_conv(f"{name}.conv2", cout, cout, 3, 3)
        add_conv("head", cfg.width, 1, 1, cfg.depth_context)
        add_dense("codegen.fc1", 1, 16)
        add_dense("codegen.fc2", 16, 64)
        add_dense("codegen.out", 64, 2 * cfg.bottleneck)
        return cls(cfg, params)

    def astype(self, dtype) -> "SwitchableModel":
        clone = SwitchableModel(
            self.config,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: AdaInCode(v.mean.astype(dtype), v.variance.astype(dtype))
             for k, v in self.codes.items()})
        return clone

    # -- code generator ----------------------------------------------------

    def _codegen_forward(self, c: float):
        """F(c) -> (mean, std, cache for backward)."""
        p = self.params
        x0 = np.array([c], dtype=p["codegen.fc1.w"].dtype)
        h1 = dense_forward(x0, p["codegen.fc1.w"], p["codegen.fc1.b"], "relu")
        h2 = dense_forward(h1, p["codegen.fc2.w"], p["codegen.fc2.b"], "relu")
        out = dense_forward(h2, p["codegen.out.w"], p["codegen.out.b"], "linear")
        half = out.shape[0] // 2
        mean = out[:half]
        variance = np.maximum(out[half:], 0.0)
        std = np.sqrt(np.maximum(variance, _VAR_EPS))
        cache = (x0, h1, h2, out, variance, std)
        return mean, std, cache

    def _codegen_backward(self, cache, d_mean: np.ndarray, d_std: np.ndarray,
                          grads: dict[str, np.ndarray]) -> None:
        """Accumulate F's parameter gradients for one style."""
        p = self.params
        x0, h1, h2, out, variance, std = cache
        half = out.shape[0] // 2
        d_var = np.where(variance > _VAR_EPS, 0.5 / std, 0.0) * d_std
        d_out = np.concatenate([d_mean, d_var * (out[half:] >= 0)])
        lg = dense_backward(h2, p["codegen.out.w"], p["codegen.out.b"],
                            d_out, "linear")
        grads["codegen.out.w"] += lg.dw
        grads["codegen.out.b"] += lg.db
        lg = dense_backward(h1, p["codegen.fc2.w"], p["codegen.fc2.b"],
                            lg.dx, "relu")
        grads["codegen.fc2.w"] += lg.dw
        grads["codegen.fc2.b"] += lg.db
        lg = dense_backward(x0, p["codegen.fc1.w"], p["codegen.fc1.b"],
                            lg.dx, "relu")
        grads["codegen.fc1.w"] += lg.dw
        grads["codegen.fc1.b"] += lg.db

    def adain_code(self, style: StyleCode) -> AdaInCode:
        """Materialized AdaIN code for a style (F evaluated, or stored)."""
        if "codegen.fc1.w" in self.params:
            mean, _, cache = self._codegen_forward(style.c)
            return AdaInCode(mean=mean.copy(), variance=cache[4].copy())
        try:
            return self.codes[style.label]
        except KeyError:
            raise InvalidInputError(
                f"model has no generator and no stored code for "
                f"{style.label!r}") from None

    # -- generator forward/backward ----------------------------------------

    def _forward_batch(self, x: np.ndarray, code_mean: np.ndarray,
                       code_std: np.ndarray, count_clamps: bool = False):
        """Batched forward: x [B][C][H][W] -> (out [B][H], cache)."""
        p = self.params
        records = []
        h = x
        for name, kind, _, _ in _block_plan(self.config):
            h_in = h
            z1 = conv2d_forward(h, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"],
                                "same")
            if kind == "blue":
                a1 = relu(z1)
                z2 = conv2d_forward(a1, p[f"{name}.conv2.w"],
                                    p[f"{name}.conv2.b"], "same")
                h = relu(z2)
                records.append(("blue", name, h_in, z1, a1, z2))
            else:
                h = leaky_relu(z1, LEAKY_SLOPE)
                records.append(("yellow", name, h_in, z1))
            if name == "block5":
                u = h
                mu = u.mean(axis=(2, 3), keepdims=True)
                uc = u - mu
                sig = np.sqrt((uc * uc).mean(axis=(2, 3), keepdims=True))
                clamped = sig <= neural.ADAIN_EPS
                if count_clamps:
                    self.adain_clamp_count += int(clamped.sum())
                sig_eff = np.where(clamped, neural.ADAIN_EPS, sig)
                h = code_std[:, :, None, None] * uc / sig_eff \
                    + code_mean[:, :, None, None]
                records.append(("adain", uc, sig_eff, clamped))
        head_in = h
        z = conv2d_forward(h, p["head.w"], p["head.b"], "valid")
        records.append(("head", head_in))
        out = z[:, 0, :, 0]
        return out, records

    def _backward_batch(self, records, grad_out: np.ndarray, code_std: np.ndarray,
                        grads: dict[str, np.ndarray]):
        """Backward through the generator; returns AdaIN code gradients.

        ``grads`` accumulates parameter gradients in place; the returned
        (d_code_mean, d_code_std) are per sample, shape [B][P].
        """
        p = self.params
        kind, head_in = records[-1]
        assert kind == "head"
        g4 = grad_out[:, None, :, None]
        lg = conv2d_backward(head_in, p["head.w"], g4, "valid")
        grads["head.w"] += lg.dw
        grads["head.b"] += lg.db
        g = lg.dx
        d_code_mean = d_code_std = None
        for rec in reversed(records[:-1]):
            if rec[0] == "adain":
                _, uc, sig_eff, clamped = rec
                n = uc.shape[2] * uc.shape[3]
                gdotu = (g * uc).sum(axis=(2, 3), keepdims=True)
                d_code_mean = g.sum(axis=(2, 3))
                d_code_std = (gdotu / sig_eff)[:, :, 0, 0]
                ts = code_std[:, :, None, None]
                du = (ts / sig_eff) * (g - g.mean(axis=(2, 3), keepdims=True))
                du -= np.where(clamped, 0.0,
                               (ts / sig_eff) * uc * gdotu / (n * sig_eff ** 2))
                g = du
            elif rec[0] == "blue":
                _, name, h_in, z1, a1, z2 = rec
                g = relu_backward(z2, g)
                lg = conv2d_backward(a1, p[f"{name}.conv2.w"], g, "same")
                grads[f"{name}.conv2.w"] += lg.dw
                grads[f"{name}.conv2.b"] += lg.db
                g = relu_backward(z1, lg.dx)
                lg = conv2d_backward(h_in, p[f"{name}.conv1.w"], g, "same")
                grads[f"{name}.conv1.w"] += lg.dw
                grads[f"{name}.conv1.b"] += lg.db
                g = lg.dx
            else:
                _, name, h_in, z1 = rec
                g = leaky_relu_backward(z1, g, LEAKY_SLOPE)
                lg = conv2d_backward(h_in, p[f"{name}.conv1.w"], g, "same")
                grads[f"{name}.conv1.w"] += lg.dw
                grads[f"{name}.conv1.b"] += lg.db
                g = lg.dx
        return d_code_mean, d_code_std

    def encode(self, slab: np.ndarray) -> np.ndarray:
        """Bottleneck feature map [P][H][W] of one slab, before AdaIN."""
        p = self.params
        h = np.asarray(slab)[None]
        for name, kind, _, _ in _block_plan(self.config):
            z1 = conv2d_forward(h, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"],
                                "same")
            if kind == "blue":
                z2 = conv2d_forward(relu(z1), p[f"{name}.conv2.w"],
                                    p[f"{name}.conv2.b"], "same")
                h = relu(z2)
            else:
                h = leaky_relu(z1, LEAKY_SLOPE)
            if name == "block5":
                return h[0]
        raise AssertionError("unreachable")


def forward(model: SwitchableModel, slab: np.ndarray,
            code: StyleCode | AdaInCode | None) -> np.ndarray:
    """Styled forward pass for one slab [J][L][D] -> dB line of length L.

    ``code`` may be a StyleCode (resolved through F or stored codes), an
    explicit AdaInCode, or None to skip the AdaIN layer entirely (the raw
    generator pass). Degenerate-channel clamps increment
    ``model.adain_clamp_count``.
    """
    slab = np.asarray(slab)
    if slab.ndim != 3:
        raise ShapeMismatchError(f"slab must be [J][L][D], got {slab.shape}")
    cfg = model.config
    if slab.shape[0] != cfg.in_channels or slab.shape[2] != cfg.depth_context:
        raise ShapeMismatchError(
            f"slab shape {slab.shape} does not match model "
            f"[{cfg.in_channels}][L][{cfg.depth_context}]")
    dtype = model.params["head.w"].dtype
    if code is None:
        u = model.encode(slab.astype(dtype))
        flat = u.reshape(u.shape[0], -1)
        mean = flat.mean(axis=1)
        std = np.sqrt(np.mean((flat - mean[:, None]) ** 2, axis=1))
        code = AdaInCode(mean=mean, variance=std ** 2)
    if isinstance(code, StyleCode):
        code = model.adain_code(code)
    code.validate()
    before = model.adain_clamp_count
    out, _ = model._forward_batch(
        slab.astype(dtype)[None],
        code.mean.astype(dtype)[None],
        code.std().astype(dtype)[None],
        count_clamps=True)
    clamped = model.adain_clamp_count - before
    if clamped:
        warnings.warn(
            f"{clamped} bottleneck channel(s) were nearly constant; their "
            f"std was clamped for the AdaIN transform",
            DegenerateChannelWarning, stacklevel=2)
    return out[0]


# ---------------------------------------------------------------------------
# dataset


def style_targets(cube: ApertureCube, psf: Psf,
                  despeckle_params: DespeckleParams | None = None,
                  lam: float = 0.02) -> dict[str, BModeImage]:
    """Classical per-style reference images for one frame.

    das: log-compressed envelope of the DAS rf-sum. deconvolution: the
    envelope deblurred by l1 deconvolution. despeckle: the DAS image
    filtered by non-local low-rank shrinkage. deconv_despeckle: the
    deconvolved image, then despeckled. None are display-thresholded.
    """
    if despeckle_params is None:
        despeckle_params = DespeckleParams()
    env = envelope_image(das(cube))
    das_img = log_compress(env)
    deconv_img = deconv_target(env, psf, lam=lam)
    return {
        "das": das_img,
        "deconvolution": deconv_img,
        "despeckle": despeckle_target(das_img, despeckle_params),
        "deconv_despeckle": despeckle_target(deconv_img, despeckle_params),
    }


def build_dataset(cubes: list[ApertureCube], psf: Psf,
                  despeckle_params: DespeckleParams | None = None,
                  seed: int = 0, context: int = 7,
                  val_fraction: float = 0.05, lam: float = 0.02):
    """Four-style training rows from aperture cubes; returns (train, val).

    Targets per frame come from :func:`style_targets`; target lines are
    clamped into the [-120, 20] dB sanity window (the deconvolution path
    can bottom out at the log floor, which would dominate the regression).
    Each depth plane contributes one sample whose input slab is
    standardized with its recorded (mean, std). The 95/5 split shuffles
    with the given seed.
    """
    samples: list[TrainingSample] = []
    for f, cube in enumerate(cubes):
        target_of = {
            label: np.clip(img.db, TARGET_DB_MIN, TARGET_DB_MAX)
            for label, img in
            style_targets(cube, psf, despeckle_params, lam).items()}
        slabs = all_input_slabs(cube, context)
        for n in range(slabs.shape[0]):
            scaled, mean, std = standardize_slab(slabs[n])
            samples.append(TrainingSample(
                input=scaled,
                targets={k: v[n].copy() for k, v in target_of.items()},
                input_mean=mean, input_std=std, frame=f, depth=n))
    rng = SplitMix64(seed)
    rng.shuffle(samples)
    n_val = int(round(len(samples) * val_fraction))
    return samples[n_val:], samples[:n_val]


# ---------------------------------------------------------------------------
# training


def _dataset_arrays(samples: list[TrainingSample], dtype):
    x = np.stack([s.input for s in samples]).astype(dtype)
    targets = {
        style.label: np.stack([s.targets[style.label] for s in samples]
                              ).astype(dtype)
        for style in STYLES}
    return x, targets


def loss_and_grads(model: SwitchableModel, x: np.ndarray,
                   targets: np.ndarray, style_idx: np.ndarray,
                   row_weights: np.ndarray | None = None):
    """Mean-squared-error loss and gradients of one mini-batch.

    ``x`` is [B][C][H][W], ``targets`` [B][L], ``style_idx`` the per-sample
    index into STYLES. Gradients cover the generator and, through the AdaIN
    codes, the code generator F. This is exactly the training step's math,
    exposed so tests can finite-difference it.

    ``row_weights`` optionally scales each sample's squared error; the
    trainer uses it to balance styles whose target magnitudes differ by
    orders of magnitude. None means uniform weighting.
    """
    dtype = x.dtype
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    present = sorted(set(int(s) for s in style_idx))
    code_caches = {}
    mean_b = np.empty((x.shape[0], model.config.bottleneck), dtype=dtype)
    std_b = np.empty_like(mean_b)
    for s in present:
        mean, std, cache = model._codegen_forward(STYLES[s].c)
        code_caches[s] = cache
        rows = style_idx == s
        mean_b[rows] = mean
        std_b[rows] = std
    out, records = model._forward_batch(x, mean_b, std_b)
    diff = out - targets
    count = diff.size
    if row_weights is None:
        loss = float(np.mean(diff * diff))
        d_out = (2.0 / count) * diff
    else:
        w = np.asarray(row_weights, dtype=dtype)[:, None]
        loss = float(np.mean(w * diff * diff))
        d_out = (2.0 / count) * w * diff
    d_mean, d_std = model._backward_batch(records, d_out, std_b, grads)
    for s in present:
        rows = style_idx == s
        model._codegen_backward(code_caches[s], d_mean[rows].sum(axis=0),
                                d_std[rows].sum(axis=0), grads)
    return loss, grads


def _validation_losses(model: SwitchableModel, x: np.ndarray,
                       targets: dict[str, np.ndarray],
                       labels: tuple[str, ...], chunk: int = 256):
    losses = {}
    for label in labels:
        code = model.adain_code(style_by_label(label))
        std = code.std().astype(x.dtype)
        mean = code.mean.astype(x.dtype)
        total, count = 0.0, 0
        for i in range(0, x.shape[0], chunk):
            xb = x[i:i + chunk]
            out, _ = model._forward_batch(
                xb, np.broadcast_to(mean, (xb.shape[0], mean.size)),
                np.broadcast_to(std, (xb.shape[0], std.size)))
            diff = out - targets[label][i:i + chunk]
            total += float(np.sum(diff * diff))
            count += diff.size
        losses[label] = total / count
    return losses


def train(model: SwitchableModel, dataset, config: TrainConfig | None = None):
    """Fit the switchable model; returns (model, history).

    ``dataset`` is a (train, val) pair of TrainingSample lists, or a single
    list used entirely for training (then early stopping tracks the
    training loss). Each batch row draws its style uniformly from
    ``config.styles`` and routes the style's c through F, so F and G train
    jointly.

    The styles' dB scales differ wildly (sparse deconvolved maps ride a
    -120 dB floor, a despeckled one is nearly constant, the rest sit in a
    ~60 dB band), so each style's squared error is scaled by the inverse
    of that style's recent validation MSE (exponential moving average,
    floored at 1 dB² and seeded with the target variance). Unweighted, the
    widest-range style soaks up nearly all of the gradient and the others
    stall; weighting by inverse target variance instead lets near-constant
    targets dominate. The model still predicts raw dB — the scaling only
    balances the optimization. For a single-style run the scale is one
    global factor per epoch, which Adam's normalization cancels.

    Early stopping: stop after ``patience`` epochs without improvement of
    the total validation loss, then restore the best weights. The total is
    the sum of log per-style validation MSEs — scale-free, so no single
    style's dB range can monopolize the stopping rule. History rows carry
    the per-style validation MSE unweighted plus this ``val_total``.
    """
    cfg = config or TrainConfig()
    if isinstance(dataset, tuple):
        train_samples, val_samples = dataset
    else:
        train_samples, val_samples = list(dataset), []
    if not train_samples:
        raise InvalidInputError("training set is empty")
    dtype = model.params["head.w"].dtype
    x_train, t_train = _dataset_arrays(train_samples, dtype)
    has_val = len(val_samples) > 0
    if has_val:
        x_val, t_val = _dataset_arrays(val_samples, dtype)
    style_indices = [i for i, s in enumerate(STYLES) if s.label in cfg.styles]
    if not style_indices:
        raise InvalidInputError(f"no valid styles in {cfg.styles!r}")
    # running per-style error scale for the loss weights; starts at the
    # target variance (the error of predicting the mean) and tracks the
    # validation MSE, floored at 1 dB² so an almost perfectly fit style
    # cannot monopolize the gradient
    ema = {STYLES[i].label:
           max(float(t_train[STYLES[i].label].var()), 1.0)
           for i in style_indices}

    if cfg.bias_warm_start and not np.any(model.params["head.b"]):
        overall = np.mean([t_train[STYLES[i].label].mean()
                           for i in style_indices])
        model.params["head.b"][:] = overall

    rng = SplitMix64(cfg.seed)
    state = AdamState()
    history: list[dict] = []
    best_total = np.inf
    best_params = None
    wait = 0
    n = x_train.shape[0]
    labels = tuple(STYLES[i].label for i in style_indices)
    for epoch in range(cfg.epochs):
        order = list(range(n))
        rng.shuffle(order)
        epoch_loss, steps = 0.0, 0
        for start in range(0, n, cfg.batch):
            idx = np.array(order[start:start + cfg.batch])
            styles = np.array([style_indices[rng.below(len(style_indices))]
                               for _ in range(idx.size)])
            targets = np.stack([t_train[STYLES[s].label][i]
                                for i, s in zip(idx, styles)])
            weights = np.array([1.0 / ema[STYLES[s].label] for s in styles])
            loss, grads = loss_and_grads(model, x_train[idx], targets,
                                         styles, row_weights=weights)
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch}, step {state.step}")
            adam_step(model.params, grads, state, cfg.lr0)
            epoch_loss += loss
            steps += 1
        train_mse = epoch_loss / steps
        if has_val:
            val_mse = _validation_losses(model, x_val, t_val, labels)
        else:
            val_mse = {label: train_mse for label in labels}
        for label, mse in val_mse.items():
            ema[label] = 0.5 * ema[label] + 0.5 * max(mse, 1.0)
        val_total = float(sum(np.log(max(mse, 1e-9))
                              for mse in val_mse.values()))
        history.append({"epoch": epoch, "train_mse": train_mse,
                        "val_mse": val_mse, "val_total": val_total})
        if val_total < best_total:
            best_total = val_total
            best_params = {k: v.copy() for k, v in model.params.items()}
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    if best_params is not None:
        model.params = best_params
    model.codes = {s.label: model.adain_code(s) for s in STYLES}
    return model, history


# ---------------------------------------------------------------------------
# inference


def infer_frame(model: SwitchableModel, cube: ApertureCube, code: StyleCode,
                context: int | None = None,
                dynamic_range: float = 60.0) -> InferenceResult:
    """Reconstruct a full frame in the chosen style, one depth at a time.

    Every depth plane is forwarded individually and timed, so the returned
    ``plane_seconds`` holds N honest per-plane wall-clock measurements. The
    image is display-thresholded to [-dynamic_range, 0] dB.
    """
    if context is None:
        context = model.config.depth_context
    cube.validate()
    resolved = model.adain_code(code)
    n_depth = cube.data.shape[1]
    rows = []
    times = np.empty(n_depth)
    for n in range(n_depth):
        start = time.perf_counter()
        slab, _, _ = standardize_slab(make_input_slab(cube, n, context))
        rows.append(forward(model, slab, resolved))
        times[n] = time.perf_counter() - start
    db = np.stack(rows).astype(np.float64)
    img = display_threshold(BModeImage(db=db, reference_max=0.0),
                            dynamic_range)
    return InferenceResult(image=img, plane_seconds=times)


# ---------------------------------------------------------------------------
# serialization


def _write_tensor(chunks: list[bytes], name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f4")
    encoded = name.encode("utf-8")
    chunks.append(struct.pack("<H", len(encoded)))
    chunks.append(encoded)
    chunks.append(struct.pack("<B", data.ndim))
    chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
    chunks.append(data.tobytes())


def save_weights(model: SwitchableModel, path: str) -> None:
    """Write weights plus the four evaluated AdaIN codes (SWBF format).

    Layout: magic "SWBF", format version u32 LE, tensor count u32 LE, then
    per tensor: name length u16 LE, UTF-8 name, rank u8, dims u32 LE each,
    float32 LE row-major payload. The four style codes are stored as
    tensors named code.<label>.mean / code.<label>.var. A CRC32 of all
    preceding bytes closes the file.
    """
    codes = {s.label: model.adain_code(s) for s in STYLES}
    tensors: list[tuple[str, np.ndarray]] = sorted(model.params.items())
    for style in STYLES:
        tensors.append((f"code.{style.label}.mean", codes[style.label].mean))
        tensors.append((f"code.{style.label}.var", codes[style.label].variance))
    chunks = [_WEIGHTS_MAGIC, struct.pack("<II", _WEIGHTS_VERSION, len(tensors))]
    for name, arr in tensors:
        _write_tensor(chunks, name, arr)
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CorruptFileError("weight file is truncated")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out


def load_weights(path: str) -> SwitchableModel:
    """Read an SWBF weight file back into a model (bit-exact round trip)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 8 + 4:
        raise CorruptFileError("weight file is truncated")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise CorruptFileError("weight file checksum mismatch")
    rd = _Reader(body)
    if rd.take(4) != _WEIGHTS_MAGIC:
        raise CorruptFileError("bad magic; not a weight file")
    version, count = struct.unpack("<II", rd.take(8))
    if version != _WEIGHTS_VERSION:
        raise CorruptFileError(f"unsupported weight format version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack("<H", rd.take(2))[0]
        name = rd.take(name_len).decode("utf-8")
        rank = struct.unpack("<B", rd.take(1))[0]
        dims = struct.unpack(f"<{rank}I", rd.take(4 * rank)) if rank else ()
        size = int(np.prod(dims)) if dims else 1
        payload = rd.take(4 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if rd.pos != len(body):
        raise CorruptFileError("trailing bytes after last tensor")

    codes: dict[str, AdaInCode] = {}
    params: dict[str, np.ndarray] = {}
    partial: dict[str, dict[str, np.ndarray]] = {}
    for name, arr in tensors.items():
        if name.startswith("code."):
            _, label, kind = name.split(".")
            partial.setdefault(label, {})[kind] = arr
        else:
            params[name] = arr
    for label, parts in partial.items():
        if set(parts) != {"mean", "var"}:
            raise CorruptFileError(f"incomplete stored code for {label!r}")
        codes[label] = AdaInCode(mean=parts["mean"], variance=parts["var"])

    required = ("block1.conv1.w", "head.w", "codegen.out.w")
    for name in required:
        if name not in params:
            raise CorruptFileError(f"weight file is missing tensor {name!r}")
    try:
        cfg = ModelConfig(
            in_channels=int(params["block1.conv1.w"].shape[1]),
            width=int(params["block1.conv1.w"].shape[0]),
            bottleneck=int(params["codegen.out.w"].shape[0] // 2),
            depth_context=int(params["head.w"].shape[3])).validate()
    except (IndexError, InvalidInputError) as exc:
        raise CorruptFileError(f"inconsistent tensor shapes: {exc}") from exc
    expected = _expected_shapes(cfg)
    if set(params) != set(expected):
        raise CorruptFileError(
            "weight file tensor names do not form a complete model")
    for name, arr in params.items():
        if arr.shape != expected[name]:
            raise CorruptFileError(
                f"tensor {name!r} has shape {arr.shape}, "
                f"expected {expected[name]}")
    return SwitchableModel(cfg, params, codes)


# ---------------------------------------------------------------------------
# estimator


class SwitchableBeamformer(BaseEstimator):
    """Estimator facade: fit on aperture cubes, predict styled B-mode images.

    ``fit`` generates the four target stacks, trains the switchable model,
    and stores it as ``model_`` (history as ``history_``). ``predict`` runs
    per-plane inference on one cube in the requested style.
    """

    def __init__(self, psf: Psf | None = None,
                 despeckle_params: DespeckleParams | None = None,
                 width: int = 16, bottleneck: int = 32, context: int = 7,
                 epochs: int = 100, batch: int = 32, lr0: float = 1e-4,
                 patience: int = 20, seed: int = 0,
                 dynamic_range: float = 60.0):
        self.psf = psf
        self.despeckle_params = despeckle_params
        self.width = width
        self.bottleneck = bottleneck
        self.context = context
        self.epochs = epochs
        self.batch = batch
        self.lr0 = lr0
        self.patience = patience
        self.seed = seed
        self.dynamic_range = dynamic_range

    def _resolve_psf(self, cube: ApertureCube) -> Psf:
        if self.psf is not None:
            return self.psf
        from .deconv import simulation_psf
        from .geometry import PulseModel
        return simulation_psf(cube.geom, PulseModel(cube.geom.center_freq))

    def fit(self, X, y=None):
        cubes = list(X)
        if not cubes:
            raise InvalidInputError("fit needs at least one aperture cube")
        psf = self._resolve_psf(cubes[0])
        dataset = build_dataset(cubes, psf,
                                despeckle_params=self.despeckle_params,
                                seed=self.seed, context=self.context)
        cfg = ModelConfig(in_channels=cubes[0].data.shape[2],
                          width=self.width, bottleneck=self.bottleneck,
                          depth_context=self.context)
        model = SwitchableModel.init(cfg, seed=self.seed)
        tc = TrainConfig(epochs=self.epochs, batch=self.batch, lr0=self.lr0,
                         patience=self.patience, seed=self.seed)
        self.model_, self.history_ = train(model, dataset, tc)
        return self

    def predict(self, cube: ApertureCube, style: str = "das") -> BModeImage:
        if not hasattr(self, "model_"):
            raise InvalidInputError("estimator is not fitted yet")
        result = infer_frame(self.model_, cube, style_by_label(style),
                             context=self.context,
                             dynamic_range=self.dynamic_range)
        return result.image
