"""Exception taxonomy shared by every module.

The CLI maps these onto exit codes: usage errors exit 1, data and
validation errors exit 2, numeric errors exit 3.
"""


class CmaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CmaError):
    """Shapes do not line up (empty input, width mismatch, bad inner dims)."""


class DegenerateVectorError(CmaError):
    """A vector with (near-)zero norm was given where a direction is required."""


class NumericError(CmaError):
    """A non-finite value (NaN/Inf) appeared where finite numbers are required."""


class InsufficientPopulationError(CmaError):
    """A class does not have enough records to sample the requested episode."""


class ConfigError(CmaError):
    """A config file could not be parsed or contains an invalid value."""


class UsageError(CmaError):
    """Bad command line: unknown verb, unknown flag, or malformed value."""


class StoreFormatError(CmaError):
    """Base class for feature-store (CMAF) parsing and validation errors."""


class BadMagicError(StoreFormatError):
    """File does not start with the CMAF magic bytes."""


class UnsupportedVersionError(StoreFormatError):
    """File declares a format version this reader does not understand."""


class TruncatedPayloadError(StoreFormatError):
    """File ends before the declared payload is complete."""


class DuplicateIdError(StoreFormatError):
    """Two records declare the same id."""


class StoreDimensionError(StoreFormatError):
    """Declared dimensions are inconsistent (d = 0, empty token sequence, width mismatch)."""


class InvalidRecordError(StoreFormatError):
    """A record payload is malformed (bad label byte, undecodable id, non-finite values)."""


class TrailingDataError(StoreFormatError):
    """Bytes remain after the last declared record."""
