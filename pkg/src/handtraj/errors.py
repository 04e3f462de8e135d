"""Exception hierarchy and CLI exit codes.

Exit code table (also in README):

    0  success
    2  command-line usage error
    3  parse / file-format error (malformed record, unknown version, missing unit tag)
    4  numeric error (non-finite loss, optimizer divergence)
    5  contract violation (invalid argument, degenerate geometry, behind camera, too short)
"""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_NUMERIC = 4
EXIT_CONTRACT = 5


class HandTrajError(Exception):
    exit_code = EXIT_CONTRACT


class InvalidArgument(HandTrajError, ValueError):
    pass


class BehindCamera(HandTrajError, ValueError):
    pass


class InsufficientPoints(HandTrajError, ValueError):
    pass


class DegenerateConfiguration(HandTrajError, ValueError):
    pass


class InsufficientEvidence(HandTrajError, ValueError):
    pass


class SequenceTooShort(HandTrajError, ValueError):
    pass


class DivergenceError(HandTrajError, ArithmeticError):
    exit_code = EXIT_NUMERIC


class FormatError(HandTrajError, ValueError):
    """Malformed input file. ``record`` is the 0-based record index when known."""

    exit_code = EXIT_PARSE

    def __init__(self, message, line=None, record=None):
        where = []
        if record is not None:
            where.append(f"record {record}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.record = record


class VersionError(FormatError):
    pass


class UnitError(FormatError):
    pass


class ShortSequenceWarning(UserWarning):
    """A sequence shorter than the clip length was evaluated as one clip."""
