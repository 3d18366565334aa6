"""Exception hierarchy shared by every module of the package."""


class DeepSldaError(Exception):
    """Base class for all errors raised by deepslda."""


# numerics
class NotSPD(DeepSldaError, ValueError):
    pass


class RegularizedNotSPD(NotSPD):
    pass


class InsufficientSamples(DeepSldaError, ValueError):
    pass


# models
class DimensionMismatch(DeepSldaError, ValueError):
    pass


class LabelOutOfRange(DeepSldaError, ValueError):
    pass


class NoClassesSeen(DeepSldaError, RuntimeError):
    pass


class EmptyBatch(DeepSldaError, ValueError):
    pass


class EmptyBank(DeepSldaError, ValueError):
    pass


# orderings
class MissingMetadata(DeepSldaError, ValueError):
    pass


class SpecTooLarge(DeepSldaError, ValueError):
    pass


# evaluation
class LengthMismatch(DeepSldaError, ValueError):
    pass


class ZeroOffline(DeepSldaError, ValueError):
    pass


# dataio
class BankFormatError(DeepSldaError, ValueError):
    pass


class BadMagic(BankFormatError):
    pass


class VersionUnsupported(BankFormatError):
    pass


class TruncatedPayload(BankFormatError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class NonFiniteFeature(BankFormatError):
    def __init__(self, row, col):
        super().__init__(f"non-finite feature value at row {row}, column {col}")
        self.row = row
        self.col = col


class BadShape(DeepSldaError, ValueError):
    pass


class CsvError(DeepSldaError, ValueError):
    pass


class RaggedRow(CsvError):
    def __init__(self, line, expected, got):
        super().__init__(f"line {line}: expected {expected} fields, got {got}")
        self.line = line


class UnparsableNumber(CsvError):
    def __init__(self, line, column, value):
        super().__init__(f"line {line}, column {column!r}: cannot parse {value!r} as a number")
        self.line = line
        self.column = column


class UnknownColumn(CsvError):
    def __init__(self, name):
        super().__init__(f"unknown column {name!r}")
        self.column = name


# cli
class ConfigError(DeepSldaError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field
