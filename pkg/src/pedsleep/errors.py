"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: DataError -> 3, NumericError -> 4.
"""


class PedsleepError(Exception):
    """Base class for all pipeline errors."""


class DataError(PedsleepError):
    """Malformed input data, files, or incompatible shapes/configs."""


class FormatError(DataError):
    """A binary container or EDF file violates its declared layout."""


class NumericError(PedsleepError):
    """A numeric procedure failed: non-finite values, degenerate statistics."""
