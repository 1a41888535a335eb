"""Exception types raised across the package.

The CLI maps these onto exit codes: ``DataError`` subclasses exit with 2,
``NumericalError`` subclasses with 3.
"""


class BanditError(Exception):
    pass


class DataError(BanditError, ValueError):
    pass


class NumericalError(BanditError, ArithmeticError):
    pass


class ShapeError(DataError):
    pass


class InsufficientData(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class DegenerateInput(DataError):
    pass


class DegenerateDenominator(NumericalError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class MissingRound(DataError):
    def __init__(self, round_index, where=""):
        self.round = round_index
        self.where = where
        msg = f"missing round {round_index}"
        if where:
            msg += f" in {where}"
        super().__init__(msg)


class DimensionMismatch(DataError):
    pass


class NonNumericCell(DataError):
    def __init__(self, path, row, column, value):
        self.path = path
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"{path}: non-numeric cell at row {row}, column {column!r}: {value!r}")


class ConfigError(BanditError, ValueError):
    pass
