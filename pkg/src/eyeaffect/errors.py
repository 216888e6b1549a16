"""Exception types shared across the pipeline.

Data-shaped problems (bad files, misaligned series) raise DataError
subclasses and map to CLI exit code 3; numeric failures (divergence)
map to exit code 4. Plain bad arguments raise ValueError.
"""


class PipelineError(Exception):
    exit_code = 1


class DataError(PipelineError):
    exit_code = 3


class ParseError(DataError):
    """Malformed cell or row in an input file."""

    def __init__(self, message, row=None, column=None):
        if row is not None:
            message = f"{message} (row {row}" + (f", column {column!r})" if column else ")")
        super().__init__(message)
        self.row = row
        self.column = column


class SequenceError(DataError):
    """Frame indices out of order or non-contiguous where order is required."""


class FormatError(DataError):
    """File violates the expected layout (missing columns, bad sections)."""


class RangeError(DataError):
    """Value outside its documented domain (e.g. annotation beyond [-1, 1])."""


class AlignmentError(DataError):
    """Two per-frame structures do not cover the same frames."""


class InsufficientDataError(DataError):
    """Series too short for the requested operation."""


class MissingChannelError(DataError):
    """A required input channel is absent (e.g. no pupil source)."""


class CatalogError(DataError):
    """Feature vector width or naming disagrees with the catalog."""


class NumericError(PipelineError):
    exit_code = 4


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch
