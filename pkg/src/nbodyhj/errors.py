"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class NBodyHJError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(NBodyHJError, ValueError):
    pass


class ValidationError(NBodyHJError, ValueError):
    pass


class ParseError(NBodyHJError, ValueError):
    """Scenario file does not follow the schema; ``path`` names the field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class CollisionError(NBodyHJError, ArithmeticError):
    """Raised when a potential is evaluated on the collision set.

    ``pair`` holds the (i, j) body indices, ``time`` the mesh time when known.
    """

    def __init__(self, pair: tuple[int, int], time: float | None = None, message: str | None = None):
        self.pair = (int(pair[0]), int(pair[1]))
        self.time = None if time is None else float(time)
        if message is None:
            message = f"bodies {self.pair[0]} and {self.pair[1]} collide"
            if self.time is not None:
                message += f" at t={self.time:.6g}"
        super().__init__(message)


class NearCollisionError(CollisionError):
    pass


class RangeError(NBodyHJError, ValueError):
    pass


class OptimizationError(NBodyHJError, RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CollisionTrappedError(OptimizationError):
    pass


class IterationLimitError(OptimizationError):
    pass
