"""Exception types shared across the package."""


class TvqError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(TvqError, ValueError):
    pass


class SchemaError(TvqError, ValueError):
    """Input file is missing required columns or is mostly unparsable."""


class DegenerateFlightError(TvqError, ValueError):
    pass


class ConfigurationError(TvqError, RuntimeError):
    """Missing checkpoint, bad config key, or inconsistent parameters."""


class TrainingError(TvqError, RuntimeError):
    """Non-finite loss or gradient encountered during optimisation."""


class ChecksumError(TvqError, ValueError):
    pass
