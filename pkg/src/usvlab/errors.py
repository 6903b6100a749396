"""Exception types shared across the package."""

from __future__ import annotations


class TopologyError(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


class CyclicTopology(TopologyError):
    pass


class DanglingParent(TopologyError):
    pass


class NonFiniteState(FloatingPointError):
    """A state or state derivative contains NaN or Inf."""


class Diverged(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"simulation diverged at t={t:.6g} s")
        self.t = t


class WindowTooLong(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, source: str, line: int, column: int, message: str):
        super().__init__(f"{source}:{line}:{column}: {message}")
        self.line = line
        self.column = column


class ValidationError(ConfigError):
    def __init__(self, field: str, constraint: str):
        super().__init__(f"{field}: {constraint}")
        self.field = field
        self.constraint = constraint


class IoError(OSError):
    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)
