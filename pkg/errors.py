from dataclasses import dataclass
from typing import List


class SkyrlabError(Exception):
    """Base class for every error raised by the simulation modules."""


@dataclass(frozen=True)
class Violation:
    """One schema problem found while validating a config file."""
    section: str
    key: str
    reason: str

    def __str__(self) -> str:
        if not self.section:
            return self.reason
        if not self.key:
            return f"[{self.section}]: {self.reason}"
        return f"{self.section}.{self.key}: {self.reason}"


class SchemaError(SkyrlabError):
    """
    Raised by the config parser with every violation it found.

    Args:
        violations: All problems, in file order
    """

    def __init__(self, violations: List[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class NonPerpendicularEasyAxis(SkyrlabError):
    pass


class ResolutionError(SkyrlabError):
    pass


class DegenerateGeometry(SkyrlabError):
    pass


class StepUnstable(SkyrlabError):
    pass


class NoConvergence(SkyrlabError):
    pass


class SkyrmionAnnihilated(SkyrlabError):
    """
    Raised by the LLG drive loop when the charge of the texture collapses.

    Args:
        message: where and when
        t: sample time [s]
    """

    def __init__(self, message: str, t: float = 0.0):
        self.t = t
        super().__init__(message)


class SingularMobility(SkyrlabError):
    pass


class LeftDomain(SkyrlabError):
    """
    Raised when a Thiele trajectory leaves the raster bounding box.

    Args:
        message: where the core left
        t: time of the first step outside [s]
        trajectory: the path up to the last step inside, if any
    """

    def __init__(self, message: str, t: float = 0.0, trajectory=None):
        self.t = t
        self.trajectory = trajectory
        super().__init__(message)


class EmptyWindow(SkyrlabError):
    """Raised by the current sweep; rows holds the sweep table computed so far."""

    def __init__(self, message: str, rows=None):
        self.rows = list(rows or [])
        super().__init__(message)


class InvalidState(SkyrlabError):
    pass


class TruncationError(SkyrlabError):
    pass


class OutOfRegime(SkyrlabError):
    pass


class CutoffError(SkyrlabError):
    pass


class EmptyTable(SkyrlabError):
    pass
