"""Exception types shared across the pipeline."""


class TelelensError(Exception):
    """Base class for pipeline errors."""


class BehindCameraError(TelelensError):
    """Point at or behind the camera plane cannot be projected."""


class OutOfDomainError(TelelensError):
    """Input lies outside the invertible region of the distortion model."""


class SequencingError(TelelensError):
    """Sample indices must advance by exactly one per step."""


class NotEngagedError(TelelensError):
    """Teleop command generation requires an engaged state."""


class DegenerateGeometryError(TelelensError):
    """Point configuration is rank-deficient for the requested solve."""


class NonConvergenceError(TelelensError):
    """Iterative refinement failed to converge."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class InsufficientDataError(TelelensError):
    """Too few usable measurements for the requested estimate."""


class UnobservableError(TelelensError):
    """Normal equations are singular along the named parameter directions."""

    def __init__(self, message: str, directions: list[str] | None = None):
        super().__init__(message)
        self.directions = directions or []


class ConfigError(TelelensError):
    """Invalid or unknown configuration content."""
