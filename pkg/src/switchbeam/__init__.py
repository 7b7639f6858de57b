"""switchbeam: ultrasound B-mode reconstruction with a switchable neural
beamformer.

The package simulates single-line-acquisition RF channel data, reconstructs
B-mode images with a classical delay-and-sum pipeline, generates deblurred
(l1 deconvolution) and despeckled (non-local low-rank) reference images,
and trains one convolutional beamformer whose output style is selected at
inference time through an AdaIN code.
"""

from .beamform import (ApertureCube, DasBeamformer, DelayedCube, RfCube,
                       all_input_slabs, das, delay_correct, extract_aperture,
                       make_input_slab, rf_to_aperture)
from .config import ExperimentConfig, load_config, parse_config
from .deconv import (DeconvProblem, FistaDeconvolver, Psf, convolve2d,
                     deconv_target, estimate_psf, fista_deconvolve,
                     simulation_psf, soft_threshold)
from .despeckle import (DespeckleParams, NonLocalLowRankDespeckler,
                        despeckle_target, estimate_noise_sigma, guidance_map,
                        match_patches, wnnm_shrink)
from .envelope import (BModeImage, das_bmode, display_threshold,
                       envelope_image, fft, hilbert_envelope, ifft,
                       log_compress, render_pgm)
from .errors import (ConfigError, CorruptFileError, DegenerateChannelError,
                     DegenerateChannelWarning, EmptyPhantomError,
                     EmptyRegionError, InvalidInputError,
                     LengthNotPowerOfTwoError, NoPeakError,
                     NonFiniteLossError, ShapeMismatchError,
                     SingularCovarianceError, SupportTooLargeError,
                     SwitchbeamError, ZeroMeanError, ZeroVarianceError)
from .fileio import pgm_to_db, read_cube, read_pgm, write_cube
from .geometry import (ArrayGeometry, Phantom, PulseModel, RegionSpec,
                       gaussian_pulse, sample_diffuse_scatterers, simulate_rf)
from .metrics import (RegionMask, SpeckleSnr, cnr, cr, fwhm_lateral, gcnr,
                      mask_from_regions, region_pixels, speckle_snr)
from .model import (AdaInCode, InferenceResult, ModelConfig, StyleCode,
                    SwitchableBeamformer, SwitchableModel, TrainConfig,
                    TrainingSample, STYLES, build_dataset, forward,
                    infer_frame, load_weights, loss_and_grads, save_weights,
                    standardize_slab, style_by_label, style_targets, train)
from .neural import (AdamState, ChannelStats, GaussianMoments, adain_backward,
                     adain_transform, adam_step, channel_stats,
                     conv2d_backward, conv2d_forward, dense_backward,
                     dense_forward, instance_stats, leaky_relu,
                     leaky_relu_backward, lr_schedule, ot_map_gaussian, relu,
                     relu_backward)
from .rng import SplitMix64

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
