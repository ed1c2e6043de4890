"""Exception types shared across the package."""


class FabmatchError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FabmatchError):
    """Bad run configuration: unknown key, unparsable value, violated constraint."""


class FileFormatError(FabmatchError):
    """Base class for binary file format errors (datasets, checkpoints, images)."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class FormatVersionError(FileFormatError):
    """File carries an unsupported format version."""


class TruncatedFileError(FileFormatError):
    """File ended before the payload declared in its header."""


class TrainingDivergedError(FabmatchError):
    """A non-finite loss value was produced during training."""
