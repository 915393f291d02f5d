"""Exception hierarchy shared across the package."""


class PredselError(Exception):
    """Base class for all errors raised by predsel."""


class NumericalError(PredselError):
    """Failure of a numerical routine (mapped to CLI exit code 3)."""


class ConstantColumn(PredselError, ValueError):
    def __init__(self, column: int):
        super().__init__(f"predictor column {column} has zero sample standard deviation")
        self.column = column


class DimensionMismatch(PredselError, ValueError):
    pass


class LengthMismatch(PredselError, ValueError):
    pass


class BadFoldCount(PredselError, ValueError):
    pass


class TooManyVariables(PredselError, ValueError):
    pass


class SingularDesign(NumericalError):
    pass


class InfiniteVariance(NumericalError):
    pass


class QuadratureOverflow(NumericalError):
    pass


class RankDeficientSubmodel(NumericalError):
    pass


class NullModelZeroDiscrepancy(NumericalError):
    pass
