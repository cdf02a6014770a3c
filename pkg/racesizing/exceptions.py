from __future__ import annotations

from pathlib import Path


class RaceSizingError(Exception):
    """Base class for every error raised by the racesizing package."""


class ConfigurationError(RaceSizingError):
    def __init__(self, message: str, *, path: str | Path | None = None, line: int | None = None):
        self.message = message
        self.path = str(path) if path is not None else None
        self.line = line
        super().__init__(self.__str__())

    def __str__(self) -> str:
        if self.path and self.line:
            return f"{self.path}:{self.line}: {self.message}"
        if self.path:
            return f"{self.path}: {self.message}"
        return self.message


class TrackFormatError(ConfigurationError):
    pass


class TrackValidationError(RaceSizingError):
    pass


class DomainError(RaceSizingError, ValueError):
    pass


class BatteryStateError(RaceSizingError):
    pass


class UnsupportedCombinationError(ConfigurationError):
    pass


class WarmStartError(RaceSizingError):
    pass


class EmptyOptimumError(RaceSizingError):
    """No N_p in the sweep produced an optimal inner solve. `curve` holds the evaluated entries."""

    def __init__(self, message: str, curve=None):
        super().__init__(message)
        self.curve = curve


class ProvenanceError(RaceSizingError):
    pass
