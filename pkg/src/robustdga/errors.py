"""Exception types raised across the package."""


class DGAError(Exception):
    """Base class for all package errors."""


class DataError(DGAError):
    """Problem with user-supplied data (bad file, bad record, empty input)."""


# domain model
class UnknownSymbol(DataError):
    pass


class EmptyDomain(DataError):
    pass


class InvalidDomain(DataError):
    pass


# tensor core
class ShapeMismatch(DGAError):
    pass


class NotOnTape(DGAError):
    pass


# classifier / model files
class EmptySplit(DataError):
    pass


class FormatVersionMismatch(DataError):
    pass


class CorruptFile(DataError):
    pass


# discretization
class LengthOutOfRange(DGAError):
    pass


class ZeroVector(DGAError):
    pass


# discrete attacks
class InputTooShort(DGAError):
    pass


class EmptyAfterFiltering(DataError):
    pass


# adversarial training
class PoolExhausted(DGAError):
    pass


class UnknownGroup(DGAError):
    pass


# evaluation
class EmptyInput(DataError):
    pass


# dataset
class NoRegistrableLabel(DataError):
    pass


class UnknownSuffix(DataError):
    pass
