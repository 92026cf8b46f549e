"""Exception hierarchy.

Input problems derive from :class:`InputError` (CLI exit code 2), numerical
failures from :class:`NumericalError` (exit code 3).
"""

from __future__ import annotations


class MrtError(Exception):
    """Base class for every error raised by this package."""


class InputError(MrtError, ValueError):
    """Invalid data, schema, specification or scenario."""


class NumericalError(MrtError, ArithmeticError):
    """A fit could not be computed reliably."""


# -- dataset -----------------------------------------------------------------


class MissingColumn(InputError):
    def __init__(self, column: str, available=None):
        self.column = column
        msg = f"missing column {column!r}"
        if available is not None:
            msg += f" (found: {', '.join(map(str, available))})"
        super().__init__(msg)


class UnknownColumn(InputError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"unknown column {column!r}")


class ColumnTypeError(InputError, TypeError):
    def __init__(self, row: int, column: str, value):
        self.row = row
        self.column = column
        super().__init__(f"row {row}: column {column!r} has non-numeric value {value!r}")


class InvariantViolation(InputError):
    def __init__(self, row: int | None, rule: str):
        self.row = row
        self.rule = rule
        where = f"row {row}: " if row is not None else ""
        super().__init__(where + rule)


class NegativeValue(InputError):
    def __init__(self, row: int, column: str, value: float):
        self.row = row
        self.column = column
        super().__init__(f"row {row}: column {column!r} has negative value {value!r}")


# -- design ------------------------------------------------------------------


class SpecViolation(InputError):
    pass


class DegenerateProbability(InputError):
    pass


class EmpiricalMeanOutOfRange(InputError):
    pass


# -- estimation --------------------------------------------------------------


class NoAvailableRows(InputError):
    pass


class RankDeficient(NumericalError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design is rank deficient; collinear columns: {', '.join(self.columns)}")


class NonFiniteWeights(NumericalError):
    pass


class SingularBread(NumericalError):
    pass


class LeverageSingular(NumericalError):
    pass


class NotConverged(NumericalError):
    def __init__(self, iterations: int):
        self.iterations = iterations
        super().__init__(f"GEE did not converge in {iterations} iterations")


class ShapeError(InputError):
    pass


class WindowRankDeficient(NumericalError):
    def __init__(self, g: float):
        self.g = g
        super().__init__(f"local polynomial window at {g!r} has too few distinct points")


class ReplicationError(MrtError):
    """A Monte Carlo replication failed; wraps the original error."""

    def __init__(self, rep: int, estimator: str, cause: BaseException):
        self.rep = rep
        self.estimator = estimator
        self.cause = cause
        super().__init__(f"replication {rep}, estimator {estimator!r}: {cause}")
