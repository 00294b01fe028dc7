"""Exception types shared across the toolkit."""


class AberraError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(AberraError, ValueError):
    """Invalid argument, configuration, or physically impossible setup."""


class UnsupportedFormatError(ValidationError):
    """Input file uses a feature the reader does not handle."""


class DivergenceError(AberraError, ArithmeticError):
    """Training produced a non-finite loss.

    Carries the last checkpoint taken before the divergence (may be None
    when the very first step diverged).
    """

    def __init__(self, message, checkpoint=None, step=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step
