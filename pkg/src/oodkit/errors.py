"""Exception types shared across oodkit."""


class OODError(Exception):
    """Base class for all oodkit errors."""


class FormatError(OODError):
    """A binary file does not conform to the OODT/OODM layout."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class SizeMismatchError(FormatError):
    """Payload length disagrees with the header."""


class InvalidInputError(OODError, ValueError):
    """Non-finite or otherwise malformed numeric input."""


class InvalidArgumentError(OODError, ValueError):
    """A parameter is out of its allowed range."""


class UndefinedMetricError(OODError, ValueError):
    """A metric is undefined for the given labels (e.g. only one class)."""


class UnusableModelError(OODError):
    """A fitted artifact cannot produce scores (e.g. no populated templates)."""


class InvalidModelError(OODError):
    """The model lacks a component required by the operation."""


class DivergenceError(OODError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message="non-finite loss"):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {message}")


class NumericError(OODError):
    """A computed quantity (e.g. a gradient) is not finite."""
