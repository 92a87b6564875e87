"""Exception hierarchy.

``DataError`` subclasses describe problems with input files or data and map to
CLI exit code 2; ``ConfigError`` subclasses map to exit code 1.
"""


class SomnwaveError(Exception):
    """Base class for all package errors."""


class ConfigError(SomnwaveError):
    """Invalid configuration or usage."""


class DataError(SomnwaveError):
    """Malformed or inconsistent input data."""


# --- EDF parsing -----------------------------------------------------------

class EdfError(DataError):
    pass


class TruncatedHeader(EdfError):
    pass


class NonAsciiField(EdfError):
    pass


class InconsistentHeaderBytes(EdfError):
    pass


class MalformedHeader(EdfError):
    """A numeric header field could not be parsed."""


class UnknownChannel(EdfError):
    pass


class TruncatedRecord(EdfError):
    pass


class DegenerateCalibration(EdfError):
    pass


class MalformedTal(EdfError):
    pass


class UnknownStageLabel(DataError):
    pass


class OverlappingEvents(DataError):
    pass


# --- preprocessing ---------------------------------------------------------

class InvalidBand(ConfigError):
    pass


class TooShort(DataError):
    pass


class ZeroVariance(DataError):
    pass


class SamplingMismatch(DataError):
    pass


class CacheFormatError(DataError):
    pass


# --- wavelets / features ---------------------------------------------------

class TooShortForLevels(DataError):
    pass


class InconsistentSubbands(DataError):
    pass


class EmptyScaleGrid(ConfigError):
    pass


class BandOutsideGrid(ConfigError):
    pass


class NonFiniteFeature(DataError):
    def __init__(self, key, column):
        self.key = key
        self.column = column
        super().__init__(f"non-finite value in column {column!r} for epoch {key}")


# --- selection / models ----------------------------------------------------

class DegenerateLabels(DataError):
    pass


class RankZero(DataError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class NonFiniteInput(DataError, ValueError):
    pass


class ClassListMismatch(DataError):
    pass


class BundleVersionMismatch(DataError):
    pass


# --- evaluation ------------------------------------------------------------

class TooFewSubjects(DataError):
    pass


class KTooLarge(ConfigError):
    pass


class EmptyInput(DataError):
    pass


class UnknownLabel(DataError):
    pass


class FoldMismatch(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class NetworkFailure(DataError):
    pass
