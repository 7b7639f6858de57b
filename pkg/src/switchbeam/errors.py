"""Exception types shared across the package.

Each error names the condition it signals; the CLI maps them onto process
exit codes (see :mod:`switchbeam.cli`).
"""

from __future__ import annotations


class SwitchbeamError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(SwitchbeamError, ValueError):
    """An input value violates a documented precondition (NaN, wrong range)."""


class ShapeMismatchError(SwitchbeamError, ValueError):
    """Array shapes are inconsistent with each other or with metadata."""


class EmptyPhantomError(SwitchbeamError, ValueError):
    """A phantom contains no scatterers, so no RF data can be synthesized."""


class LengthNotPowerOfTwoError(SwitchbeamError, ValueError):
    """The FFT length is not a power of two."""


class SupportTooLargeError(SwitchbeamError, ValueError):
    """A requested kernel support exceeds the image extent."""


class DegenerateChannelError(SwitchbeamError, ValueError):
    """A feature channel is constant, so its standard deviation is ~0."""


class CorruptFileError(SwitchbeamError, ValueError):
    """A binary file failed its magic, shape, or checksum validation."""


class EmptyRegionError(SwitchbeamError, ValueError):
    """A region mask selects no pixels."""


class ZeroVarianceError(SwitchbeamError, ValueError):
    """Both regions have zero variance, so CNR is undefined."""


class ZeroMeanError(SwitchbeamError, ValueError):
    """A region mean of zero makes the requested ratio undefined."""


class NoPeakError(SwitchbeamError, ValueError):
    """A lateral profile has no unique maximum to measure a width from."""


class SingularCovarianceError(SwitchbeamError, ValueError):
    """A covariance matrix is not positive definite."""


class NonFiniteLossError(SwitchbeamError, FloatingPointError):
    """Training produced a NaN or infinite loss."""


class ConfigError(SwitchbeamError, ValueError):
    """A config file failed to parse or failed schema validation."""


class DegenerateChannelWarning(UserWarning):
    """A feature channel had ~zero spread and its std was clamped."""
