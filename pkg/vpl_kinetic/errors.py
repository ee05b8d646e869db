"""Exceptions raised across the package.

The command-line front door maps these onto exit codes:
:class:`ConfigError`, :class:`FormatError` and :class:`GeometryError` -> 2,
:class:`NumericalError` and :class:`DiagnosticsError` -> 3,
:class:`CheckFailure` -> 4.
"""


class VPLError(Exception):
    """Base class for all package errors."""

    pass


class ConfigError(VPLError):
    """Raise on config parsing/validation error."""

    pass


class NumericalError(VPLError):
    """Raise when a numerical procedure fails or its input is not finite."""

    def __init__(self, message, step_index=None):
        if step_index is not None:
            message = "step {}: {}".format(step_index, message)
        super().__init__(message)
        self.step_index = step_index


class SmallnessError(NumericalError):
    """Raise when the diffusion matrix loses positivity."""

    pass


class NeutralityError(NumericalError):
    """Raise on a non-neutral source for the pure Neumann problem."""

    def __init__(self, imbalance):
        super().__init__(
            "Neumann source is not neutral (imbalance: {:.3e})".format(imbalance)
        )
        self.imbalance = imbalance


class GeometryError(VPLError):
    """Raise on degenerate geometry (boundary gradient, chart, extension)."""

    pass


class DiagnosticsError(VPLError):
    """Raise when a functional cannot be evaluated on the supplied data."""

    pass


class FormatError(VPLError):
    """Raise when a binary checkpoint or cache file does not match."""

    pass


class CheckFailure(VPLError):
    """Raise when an invariant check suite fails."""

    pass
