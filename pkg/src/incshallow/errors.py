"""Exception hierarchy shared by all incshallow modules."""


class IncShallowError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(IncShallowError):
    """Invalid experiment configuration; the message names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class FormatError(IncShallowError):
    """Malformed feature file (bad magic, dimension mismatch, non-finite value)."""


class ZeroVectorError(IncShallowError):
    """Vector with (near-)zero Euclidean norm; signals a corrupt input feature."""


class InsufficientSamplesError(IncShallowError):
    """A class has too few vectors to hold out the requested validation split."""


class DimensionMismatchError(IncShallowError):
    """Vector length differs from the expected feature dimension."""


class EmptyClassError(IncShallowError):
    """A classifier training set (positives or negatives) is empty."""


class InsufficientExternalError(IncShallowError):
    """External negative pool smaller than the memory budget."""


class EmptyInputError(IncShallowError):
    """An operation requiring at least one item received none."""


class DuplicateClassError(IncShallowError):
    """A class id was introduced twice in the incremental protocol."""


class KTooLargeError(IncShallowError):
    """Top-k query with k exceeding the number of known classes."""


class UnknownClassError(IncShallowError):
    """Evaluation set references a class the system does not know."""


class EmptyValidationError(IncShallowError):
    """Grid search requires a non-empty validation partition for every class."""


class SeparationInfeasibleError(IncShallowError):
    """Too many synthetic classes for the requested separation floor and dimension."""
