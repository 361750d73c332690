"""Exception hierarchy shared across the package."""


class UmoeError(Exception):
    """Base class for all errors raised by this package."""


class InputError(UmoeError):
    """An argument violates a documented precondition (bad value, shape mismatch)."""


class ConfigError(UmoeError):
    """A run configuration is malformed (unknown key, wrong type, bad value)."""


class DataError(UmoeError):
    """A data file or dataset cannot be loaded or processed."""


class FitError(UmoeError):
    """Model estimation failed (degenerate inputs, impossible partition)."""


class TrainingError(FitError):
    """Gradient training diverged to a non-finite loss."""


class SchemaError(UmoeError):
    """A saved model and the supplied inputs disagree on schema."""
