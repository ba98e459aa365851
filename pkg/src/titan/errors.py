"""Exception hierarchy shared by the whole package."""


class TitanError(Exception):
    """Base class for all errors raised by titan."""


class ShapeError(TitanError, ValueError):
    """Block shapes do not match."""


class ConfigError(TitanError, ValueError):
    """A constant, schedule or surrogate configuration is out of range."""


class NumericalError(TitanError, ArithmeticError):
    """A NaN or infinity appeared where a finite value is required."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class InnerSolverError(TitanError, RuntimeError):
    """A block subproblem could not be solved."""

    def __init__(self, message, block=None, iteration=None):
        where = []
        if block is not None:
            where.append(f"block {block}")
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.block = block
        self.iteration = iteration


class DataError(TitanError, ValueError):
    """Input data is malformed (bad line, duplicate entry, empty file)."""
