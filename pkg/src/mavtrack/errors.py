"""Exception and warning types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value. ``key`` names the offending field when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class CalibrationError(RuntimeError):
    """Density calibration could not fill every grid cell."""


class ModelStateError(RuntimeError):
    """A query was made against an uncalibrated density model."""


class TrajectoryRangeError(ValueError):
    """Trajectory evaluated outside its scripted duration."""


class TrackMiss(RuntimeError):
    """Neither modality produced an estimate to fuse."""


class RateClampWarning(UserWarning):
    """A requested integration rate fell outside its modality band and was clamped."""
