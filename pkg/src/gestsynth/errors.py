"""Exception taxonomy.

Every error raised on purpose by this package derives from GestsynthError.
The ``exit_code`` attribute is the process exit status the CLI maps the
error to: 1 usage, 2 missing dependency, 3 bad data, 4 numerical failure.
"""


class GestsynthError(Exception):
    exit_code = 3


class UsageError(GestsynthError):
    """Bad command line arguments or an invalid run configuration."""

    exit_code = 1


class ConfigError(UsageError):
    """A config value violates its documented range or constraint."""


class ConditionError(UsageError):
    """No usable conditioning modality was supplied."""


class DependencyError(GestsynthError):
    """A required checkpoint or earlier pipeline phase is missing."""

    exit_code = 2


class DataError(GestsynthError):
    exit_code = 3


class ParseError(DataError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StructuralError(DataError):
    """Parsed pieces disagree with each other (e.g. channel counts)."""


class RetargetError(DataError):
    """Source skeleton cannot be mapped onto the reference skeleton."""


class SpliceError(DataError):
    """Clips handed to the hybrid splice are incompatible."""


class ClipTooShortError(DataError):
    """Clip below the minimum usable length; callers filter these."""


class ShapeError(DataError):
    """Array arguments have inconsistent shapes."""


class NumericalError(GestsynthError):
    exit_code = 4


class DegeneracyError(NumericalError):
    """Rotation feature too degenerate to complete into a matrix."""


class TrainingError(NumericalError):
    """Training diverged (non-finite loss) or missed a sanity threshold."""
