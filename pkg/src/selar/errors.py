"""Exception hierarchy shared by all modules."""


class SelarError(Exception):
    """Base class for every error raised by this package."""


# graph / data
class SchemaError(SelarError, ValueError):
    pass


class CompositionError(SelarError, ValueError):
    pass


class OracleRefusedError(SelarError):
    pass


class InsufficientPositivesError(SelarError, ValueError):
    pass


class InsufficientNegativesError(SelarError, ValueError):
    pass


class ParseError(SelarError, ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class ConfigError(SelarError, ValueError):
    pass


# tensors / autodiff
class ShapeError(SelarError, ValueError):
    pass


class NumericError(SelarError, ArithmeticError):
    pass


class ContractError(SelarError, ValueError):
    pass


class NestingError(SelarError, RuntimeError):
    pass


# models / training
class HeadKindError(SelarError, TypeError):
    pass


class ModeError(SelarError, ValueError):
    pass


class BatchError(SelarError, ValueError):
    pass


class SplitError(SelarError, ValueError):
    pass


class UndefinedMetricError(SelarError, ValueError):
    pass


class StateError(SelarError, RuntimeError):
    pass
