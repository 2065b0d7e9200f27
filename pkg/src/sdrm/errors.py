"""Exception taxonomy shared across the package."""


class SdrmError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SdrmError):
    """A model, schedule, or pipeline was built with inconsistent settings."""


class DataError(SdrmError):
    """Input data could not be parsed or fails a structural requirement."""


class TrainingError(SdrmError):
    """Training produced non-finite values or otherwise diverged."""
