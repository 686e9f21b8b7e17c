"""Exception hierarchy; each class carries the CLI exit code it maps to."""
from typing import Optional


class BunchlabError(Exception):
    exit_code = 1

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage

    def with_stage(self, stage: str) -> "BunchlabError":
        if self.stage is None:
            self.stage = stage
        return self

    def __str__(self) -> str:
        message = super().__str__()
        return f"[{self.stage}] {message}" if self.stage else message


class InputError(BunchlabError):
    """Malformed input file or argument."""
    exit_code = 2


class DimensionError(BunchlabError):
    exit_code = 3


class DomainError(BunchlabError):
    """Value outside the mathematical domain of an operation."""
    exit_code = 3


class SizeGuardError(BunchlabError):
    exit_code = 3


class IndexOutOfRangeError(BunchlabError):
    exit_code = 3


class PrecisionError(BunchlabError):
    exit_code = 4


class ConsistencyError(BunchlabError):
    """An internal identity (Laplace sums, round trip) failed to hold."""
    exit_code = 4


class ConvergenceError(BunchlabError):
    exit_code = 4


class DataCorruptionError(BunchlabError):
    exit_code = 4


class ScientificCheckError(BunchlabError):
    """A reproduced value or a selftest property failed its check."""
    exit_code = 5
