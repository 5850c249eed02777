"""Exception types shared across the package.

The CLI maps these onto process exit codes: precondition violations exit
with 2, data-quality failures with 3 and plain I/O problems with 4.
"""


class PhytoscanError(Exception):
    """Base class for package-specific errors."""


class PreconditionError(PhytoscanError, ValueError):
    """An argument or configuration violates an operation's contract."""


class DataQualityError(PhytoscanError, RuntimeError):
    """Input data is present but too degraded or malformed to process."""


class ParseError(DataQualityError):
    """A structured text file could not be parsed.

    Carries the path and 1-based line number of the offending line.
    """

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class EmptyCloudError(DataQualityError):
    """A point cloud with zero points was supplied or loaded."""


class RegistrationError(DataQualityError):
    """Registration failed to produce a usable result."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class NoAlignmentError(RegistrationError):
    """Feature matching could not find a consistent rigid alignment."""


class DegenerateGeometryError(DataQualityError):
    """A geometric construction received degenerate input (e.g. coplanar points)."""
