"""Tracking a small aerial vehicle in lidar point clouds with adaptive integration times."""

from .errors import CalibrationError, ConfigError, ModelStateError, RateClampWarning, TrackMiss, TrajectoryRangeError
from .integrator import Frame, FrameTap, Modality, RateSet, tap
from .presets import PRESETS, Scenario
from .scan_pattern import ScanPatternConfig
from .sensing import CountThresholds, DensityModel, calibrate, default_calibration_scene
from .tracker import MavState, TrackRecord, Tracker, TrackerConfig
from .validator import ValidatorConfig, validate

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "ConfigError", "ModelStateError", "RateClampWarning", "TrackMiss", "TrajectoryRangeError",
    "Frame", "FrameTap", "Modality", "RateSet", "tap", "PRESETS", "Scenario", "ScanPatternConfig",
    "CountThresholds", "DensityModel", "calibrate", "default_calibration_scene",
    "MavState", "TrackRecord", "Tracker", "TrackerConfig", "ValidatorConfig", "validate",
]
