"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: validation-type failures exit 1,
integrity failures exit 2, backend failures exit 3.
"""


class SliderKitError(Exception):
    """Base class for all package errors."""


class ValidationError(SliderKitError):
    """User-supplied input violates a documented precondition."""

    exit_code = 1


class ConfigurationError(ValidationError):
    """A configuration value is inconsistent (bad rank, unknown layer, ...)."""


class ContractViolation(ValidationError):
    """Caller broke an internal API contract (shape or encoder mismatch)."""


class CapabilityError(ValidationError):
    """A plug-in was asked for something it does not support."""


class NotFoundError(ValidationError):
    """A referenced id (adapter, backend, encoder) does not exist."""


class IntegrityError(SliderKitError):
    """Persisted data fails checksum or version verification."""

    exit_code = 2


class ParseError(IntegrityError):
    """A serialized record is malformed or truncated."""


class BackendError(SliderKitError):
    """The diffusion backend failed at runtime."""

    exit_code = 3


class TrainingError(BackendError):
    """Model training did not converge within its budget."""
