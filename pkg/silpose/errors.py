"""Exception hierarchy shared by every silpose module."""
from __future__ import annotations


class SilposeError(Exception):
    """Base class; track mode catches this per particle and carries on."""


class InvalidInputError(SilposeError, ValueError):
    pass


class ProjectionError(SilposeError):
    pass


class DegenerateError(SilposeError):
    pass


class RenderError(SilposeError):
    pass


class EmptyImageError(SilposeError):
    pass


class LibraryMismatchError(SilposeError):
    pass


class FormatError(SilposeError):
    def __init__(self, path, location: str, message: str):
        self.path = str(path)
        self.location = location
        super().__init__(f"{self.path} [{location}]: {message}")


class ConfigError(SilposeError):
    def __init__(self, key: str, message: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}{where}: {message}")
