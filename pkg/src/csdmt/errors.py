"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with each other or with the downsampling factor."""


class ConfigError(ValueError):
    """A configuration value is outside its allowed set."""


class DataError(ValueError):
    """Input data is malformed (bad labels, empty dataset, unreadable files)."""


class TrainingError(RuntimeError):
    """A training step produced a non-finite value; the message names the term or stage."""
