"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ModelError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatch(ModelError, ValueError):
    pass


class InvalidParam(ModelError, ValueError):
    pass


class UnsupportedCombination(ModelError):
    pass


class DegenerateRisk(ModelError):
    pass


class SingularGamma(ModelError):
    pass


class WrongRiskKind(ModelError):
    pass


class StrategyMismatch(ModelError):
    pass


class WeightUndefined(ModelError):
    pass


class InsufficientTail(ModelError):
    pass


class NoSurvivors(ModelError):
    pass


class NoConvergence(ModelError):
    """Newton iteration failed to reach the residual tolerance."""

    def __init__(self, max_iter: int, last_residual: float, history=()):
        self.max_iter = max_iter
        self.last_residual = last_residual
        self.history = tuple(history)
        super().__init__(
            f"no convergence after {max_iter} iterations "
            f"(last residual {last_residual:.3e})"
        )


class ParseError(ModelError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(ModelError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(f"{d.code}: {d.message}" for d in self.diagnostics)
        super().__init__(f"scenario failed validation: {lines}")
