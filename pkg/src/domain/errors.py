from __future__ import annotations

from typing import Any


class ConfigurationError(ValueError):
    """
    Invalid construction parameters or scenario config.
    Carries every violation found as (json_pointer, message) pairs.
    """

    def __init__(self, message: str, violations: list[tuple[str, str]] | None = None):
        super().__init__(message)
        self.violations = violations or []

    def __str__(self) -> str:
        base = super().__str__()
        if not self.violations:
            return base
        lines = [f"{pointer or '/'}: {message}" for pointer, message in self.violations]
        return base + "\n" + "\n".join(lines)


class ArgumentError(ValueError):
    pass


class DegenerateGeodesicError(ArgumentError):
    """Raised for cut-locus pairs; carries the canonical tie-break great circle."""

    def __init__(self, message: str, direction: Any, plane_normal: Any):
        super().__init__(message)
        self.direction = direction
        self.plane_normal = plane_normal


class MeshQualityError(ValueError):
    pass


class InputError(ValueError):
    pass


class RangeError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InfeasibilityError(SolverError):
    pass


class NumericalError(SolverError):
    pass


class ArtifactWriteError(OSError):
    def __init__(self, path: Any, reason: str):
        super().__init__(f"Failed to write artifact {str(path)!r}: {reason}")
        self.path = path
