"""Exception types raised across the estimation pipeline."""


class OptiStateError(Exception):
    """Base class for all package errors."""


class GimbalLock(OptiStateError):
    """Pitch too close to +-pi/2 for a unique Z-Y-X decomposition."""


class SingularInertia(OptiStateError):
    """World-frame inertia tensor is not invertible."""


class NoContact(OptiStateError):
    """Leg odometry requested with no foot in contact."""


class InnovationSingular(OptiStateError):
    """Innovation covariance is numerically singular."""


class Infeasible(OptiStateError):
    """Force allocation could not meet the tracking tolerance."""


class ConfigError(OptiStateError, ValueError):
    """Inconsistent or unknown configuration value."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class FormatError(OptiStateError):
    """Binary file has bad magic, version or length."""


class ShapeError(OptiStateError, ValueError):
    """Array shape does not match the configured model."""


class DivergedError(OptiStateError):
    """Training loss became non-finite."""


class MissingTruth(OptiStateError):
    """A dataset used for training has frames without ground truth."""


class CheckpointMismatch(OptiStateError):
    """Checkpoint does not match the requested configuration."""
