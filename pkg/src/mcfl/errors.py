"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation problems exit 2, numerical
divergence exits 3 and enumeration-cap breaches exit 4.
"""


class MCFLError(Exception):
    """Base class for all package errors."""


class ValidationError(MCFLError, ValueError):
    """An input violates a documented precondition."""


class InvalidDecrementError(ValidationError):
    pass


class EnumerationTooLargeError(MCFLError):
    """Profile or subset enumeration would exceed the configured cap."""

    def __init__(self, size, cap):
        self.size = size
        self.cap = cap
        super().__init__(
            f"enumeration of {size} items exceeds the cap of {cap} "
            "(set MCFL_ENUM_CAP to override)"
        )


class DivergenceError(MCFLError):
    """An iterate or gradient became non-finite."""

    def __init__(self, epoch, message="non-finite iterate"):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")
