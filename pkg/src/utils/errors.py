"""Module with the exception hierarchy shared by every package.

Library code raises these; only the CLI turns them into process exit codes.
"""


class MonetLabError(Exception):
    """Base class for all errors raised by the project.

    Attributes:
        exit_code (int): Process exit code the CLI uses for this error family.
    """

    exit_code = 1


class InvalidArgumentError(MonetLabError, ValueError):
    """An argument is outside its documented domain."""


class ConfigError(MonetLabError):
    """A run configuration is invalid or cannot satisfy a protocol."""


class DataFormatError(MonetLabError):
    """A file or dataset is malformed, missing or unreadable."""

    exit_code = 2


class InvalidDataError(DataFormatError):
    """Pixel data is unusable (non-finite values, degenerate channels)."""


class LeakageError(DataFormatError):
    """Evaluation images overlap with the generative model's training images."""


class NumericalError(MonetLabError):
    """A numerical procedure diverged or lost its preconditions.

    Args:
        message (str): Human readable description.
        snapshot (dict, optional): Diagnostic values captured at the failure point.
    """

    exit_code = 3

    def __init__(self, message: str, snapshot: dict = None) -> None:
        """Initialize the error with an optional diagnostic snapshot.

        Args:
            message (str): Human readable description.
            snapshot (dict, optional): Diagnostic values captured at the failure point.
        """
        super().__init__(message)
        self.snapshot = snapshot or {}
