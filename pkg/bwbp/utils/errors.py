"""
Exceptions du package bwbp.

Each error names the module where the cause lies; the CLI maps the class to
its exit code.
"""

from typing import Optional


class BwbpError(ValueError):
    """Base class: `module` names the module-level cause."""

    exit_code = 1

    def __init__(self, message: str, module: str = "bwbp"):
        super().__init__(f"[{module}] {message}")
        self.module = module


class ModelStructureError(BwbpError):
    """Malformed law, missing SharingLaw or unknown model-file key."""

    exit_code = 1


class AssumptionViolationError(BwbpError):
    """(A1)-(A3) fails where a classification was requested."""

    exit_code = 2

    def __init__(self, message: str, module: str = "criteria", report: Optional[object] = None):
        super().__init__(message, module)
        self.report = report


class CapacityError(BwbpError):
    """Enumeration budget exceeded."""

    exit_code = 3


class EscapedMassError(BwbpError):
    """Too much probability (or expected) mass left the cap of an exact recursion."""

    exit_code = 3

    def __init__(self, message: str, module: str, escaped: float):
        super().__init__(message, module)
        self.escaped = escaped


class ParasiteOverflowError(BwbpError):
    """A parasite count would leave the signed 64-bit range."""

    exit_code = 3
