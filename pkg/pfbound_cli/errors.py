"""Exception hierarchy shared by the library and the CLI handlers."""

from typing import Optional


class PFBoundError(Exception):
    """Base class for all pfbound errors."""


class DomainError(PFBoundError, ValueError):
    """Input outside an operation's domain (bad index, empty input, shape mismatch)."""


class ParseError(DomainError):
    """Malformed input file."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}"
        if line is not None:
            location += f":{line}" if location else f"line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class NumericalError(PFBoundError, ArithmeticError):
    """Singular or non positive definite system, or non-finite linear algebra output."""


class DivergenceError(PFBoundError):
    """A run that was required to converge produced a non-finite loss."""
