"""Scenario bundles and the shipped presets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .integrator import DEFAULT_LF_RATE
from .kinematics import UgvState
from .scan_pattern import ScanPatternConfig
from .scene import Box, CirclePath, LinePath, MavBody, NoiseConfig, Scene, hover_path
from .tracker import TrackerConfig, parse_mode
from .validator import ValidatorConfig


@dataclass
class Scenario:
    name: str
    scene: Scene
    scan: ScanPatternConfig = field(default_factory=ScanPatternConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    validator: ValidatorConfig = field(default_factory=ValidatorConfig)
    duration: float = 10.0
    seed: int = 0
    mode: str = "adaptive"
    ugv0: UgvState = field(default_factory=UgvState)
    ugv_control: bool = True
    f_LF: float = DEFAULT_LF_RATE

    def __post_init__(self):
        if self.scene.mav is None:
            raise ConfigError("scenario needs a MAV", "mav")
        if not self.duration > 0:
            raise ConfigError("duration must be positive", "duration")
        if self.duration > self.scene.mav.trajectory.duration + 1e-9:
            raise ConfigError(f"duration {self.duration} exceeds the trajectory length "
                              f"{self.scene.mav.trajectory.duration:.3f}", "duration")
        self.mode = parse_mode(self.mode)[0]

    @property
    def trajectory(self):
        return self.scene.mav.trajectory


def _room(rear_x: float, side_y: float, height: float = 3.0) -> list[Box]:
    t = 0.2
    return [
        Box([rear_x + t, 0.0, height / 2], [t, side_y + 2 * t, height / 2], 0.6),
        Box([rear_x / 2, side_y + t, height / 2], [rear_x / 2 + 2 * t, t, height / 2], 0.6),
        Box([rear_x / 2, -side_y - t, height / 2], [rear_x / 2 + 2 * t, t, height / 2], 0.6),
    ]


CIRCLE_CENTER = (6.5, 0.0, 1.0)
CIRCLE_RADIUS = 2.0
CIRCLE_REAR_WALL = 10.0  # m, 1.5 m behind the far point of the orbit


def circle_ramp(seed: int = 0, duration: float = 27.0, noise: NoiseConfig | None = None) -> Scenario:
    """2 m orbit 4.5-8.5 m ahead, speed ramping 0.5 -> 2.5 m/s over 12 s, close to a rear wall.

    The orbit starts at its near point; four revolutions take about 24.9 s.
    """
    traj = CirclePath(center=CIRCLE_CENTER, radius=CIRCLE_RADIUS, omega_start=0.25, omega_end=1.25,
                      ramp_time=12.0, phase=math.pi, duration=duration)
    noise = noise or NoiseConfig(seed=seed)
    scene = Scene(ground_z=0.0, obstacles=_room(CIRCLE_REAR_WALL, 4.5), mav=MavBody(traj), noise=noise)
    return Scenario("circle_ramp", scene, duration=duration, seed=seed)


def corridor_35m(speed: float = 1.0, seed: int = 0, noise: NoiseConfig | None = None,
                 duration: float | None = None) -> Scenario:
    """Straight flight away from a static UGV down a 2.4 m wide corridor, 3 m -> 38 m.

    ``duration`` cuts the run short (default: the whole flight).
    """
    traj = LinePath(start=[3.0, 0.0, 1.0], end=[38.0, 0.0, 1.0], speed_start=speed)
    noise = noise or NoiseConfig(seed=seed)
    walls = [Box([20.0, 1.4, 1.5], [21.0, 0.2, 1.5], 0.6), Box([20.0, -1.4, 1.5], [21.0, 0.2, 1.5], 0.6)]
    scene = Scene(ground_z=0.0, obstacles=walls, mav=MavBody(traj), noise=noise)
    return Scenario("corridor_35m", scene, duration=traj.duration if duration is None else duration,
                    seed=seed, ugv_control=False)


def hover(distance: float = 5.0, duration: float = 30.0, seed: int = 0, altitude: float = 1.0,
          noise: NoiseConfig | None = None) -> Scenario:
    traj = hover_path([distance, 0.0, altitude], duration)
    noise = noise or NoiseConfig(seed=seed)
    scene = Scene(ground_z=0.0, obstacles=[], mav=MavBody(traj), noise=noise)
    return Scenario("hover", scene, duration=duration, seed=seed, ugv_control=False)


PRESETS = {"circle_ramp": circle_ramp, "corridor_35m": corridor_35m, "hover": hover}


def initial_state(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Known take-off state: true position and velocity at t = 0."""
    p, v = scenario.trajectory.evaluate(0.0)
    return np.asarray(p, dtype=float), np.asarray(v, dtype=float)
