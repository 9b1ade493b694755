"""Exception hierarchy with machine-parseable error codes.

Every error raised by the package carries a short ``code`` that the CLI
emits on the structured diagnostic stream.
"""


class WavemarkError(Exception):
    """Base class for all package errors."""

    code = "E_GENERIC"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class ValidationError(WavemarkError):
    """Malformed or inconsistent input data."""

    code = "E_VALIDATION"


class ConfigError(WavemarkError):
    """Invalid configuration values."""

    code = "E_CONFIG"


class SingularDesignError(WavemarkError):
    """A model design matrix cannot be built or used."""

    code = "E_SINGULAR_DESIGN"


class ConvergenceError(WavemarkError):
    """An iterative fit failed to converge; diagnostics in ``details``."""

    code = "E_NO_CONVERGENCE"


class SeparationError(WavemarkError):
    """Monotone partial likelihood (divergent coefficients)."""

    code = "E_SEPARATION"


class NoEventsError(WavemarkError):
    """Survival estimation requested on data without events."""

    code = "E_NO_EVENTS"


class BandError(WavemarkError):
    """Requested period band lies outside the computed decomposition."""

    code = "E_BAND_RANGE"


class WeightsError(WavemarkError):
    """Censoring weights are not estimable."""

    code = "E_IPCW"


class ArchiveError(WavemarkError):
    """Model archive is unreadable or has an incompatible version."""

    code = "E_ARCHIVE"
