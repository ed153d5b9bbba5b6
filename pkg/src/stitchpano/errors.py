"""Exception taxonomy shared across the package.

Geometry and validation problems are ValueError subclasses so they behave
normally in generic code; backend failures form their own branch because the
remote client needs to tell retryable transport faults apart from protocol
violations and poisoned data.
"""


class StitchPanoError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(StitchPanoError, ValueError):
    """A tensor dimension is zero, negative, or of the wrong rank."""


class ShapeError(StitchPanoError, ValueError):
    """Two tensors that must agree in shape do not."""


class BoundsError(StitchPanoError, ValueError):
    """A window or patch placement falls outside its canvas."""


class ConfigError(StitchPanoError, ValueError):
    """A plan or sampler configuration violates its invariants."""


class FormatError(StitchPanoError, ValueError):
    """A serialized tensor cannot be parsed; the message names the field."""


class UnsupportedChannelsError(StitchPanoError, ValueError):
    """Image export only handles 1- or 3-channel canvases."""


class NumericalDomainError(StitchPanoError, ValueError):
    """A matrix is outside the domain of a numerical routine (asymmetric,
    indefinite, or similar)."""


class DegenerateEmbeddingError(StitchPanoError, ValueError):
    """An embedding vector has zero norm and no cosine direction."""


class InsufficientSamplesError(StitchPanoError, ValueError):
    """Too few samples to estimate a distribution statistic."""


class UsageError(StitchPanoError):
    """Bad command-line arguments (maps to exit code 1)."""


class BackendError(StitchPanoError):
    """A denoiser backend failed.

    ``request_index`` identifies the failing request within a batch;
    ``step`` and ``unit`` are filled in by the sampler when it knows which
    time step and window/stitch pass was in flight.
    """

    def __init__(self, message, request_index=None, step=None, unit=None):
        super().__init__(message)
        self.request_index = request_index
        self.step = step
        self.unit = unit


class TransportError(BackendError):
    """Timeout or connection failure; safe to retry idempotently."""


class ProtocolError(BackendError):
    """The backend answered with something outside the wire protocol."""


class DataError(BackendError):
    """The backend returned non-finite values; the run must abort."""
