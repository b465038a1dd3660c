"""Exception hierarchy.

Every error carries a short ``category`` used by the CLI for the
``error: <category>: <detail>`` line and an ``exit_code`` (1 for bad input,
2 for numerical failure).
"""


class IcxError(Exception):
    category = "error"
    exit_code = 1


class ParameterError(IcxError, ValueError):
    category = "parameter"


class ValidationError(IcxError, ValueError):
    category = "validation"


class FormatError(IcxError, ValueError):
    category = "format"


class LengthError(FormatError):
    category = "length"


class DimensionError(IcxError, ValueError):
    category = "dimension"


class FileIOError(IcxError, OSError):
    category = "io"


class NumericalError(IcxError, ArithmeticError):
    category = "numerical"
    exit_code = 2


class RankDeficiencyError(NumericalError):
    category = "rank"

    def __init__(self, message, k_max=None):
        super().__init__(message)
        self.k_max = k_max


class DivergenceError(NumericalError):
    category = "divergence"


class UndefinedMetricError(NumericalError):
    category = "metric"


class GenerationError(NumericalError):
    category = "generation"


class FitError(IcxError, ValueError):
    category = "fit"
