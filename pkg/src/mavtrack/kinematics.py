"""Planar UGV state, its odometry, and sensor/world frame transforms.

The lidar sits at a fixed height on the UGV with no pitch or roll, so the
sensor frame is the world frame rotated by the UGV yaw and shifted by
``(x, y, sensor_height)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass
class UgvState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(3))  # x, y [m], yaw [rad]
    q_dot: np.ndarray = field(default_factory=lambda: np.zeros(3))  # vx, vy [m/s] world, yaw rate [rad/s]

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float).reshape(3)
        self.q_dot = np.array(self.q_dot, dtype=float).reshape(3)
        self.q[2] = wrap_angle(self.q[2])

    @property
    def yaw(self) -> float:
        return float(self.q[2])

    def advanced(self, dt: float, q_dot: np.ndarray | None = None) -> "UgvState":
        """State after ``dt`` seconds of constant ``q_dot`` (default: the current one)."""
        qd = self.q_dot if q_dot is None else np.asarray(q_dot, dtype=float)
        return UgvState(self.q + qd * dt, qd)


class UgvPath:
    """Odometry: piecewise constant-velocity segments of the UGV pose.

    ``pose_at`` returns the exact pose under that model; yaw is kept unwrapped
    internally so interpolation never jumps across +-pi.
    """

    def __init__(self):
        self._t: list[float] = []
        self._q: list[np.ndarray] = []
        self._qd: list[np.ndarray] = []

    @classmethod
    def constant(cls, ugv: UgvState, t0: float = 0.0) -> "UgvPath":
        path = cls()
        path.append(t0, ugv)
        return path

    def append(self, t: float, ugv: UgvState) -> None:
        q = ugv.q.copy()
        if self._q:
            # continue the unwrapped yaw of the previous segment
            prev = self._q[-1] + self._qd[-1] * (t - self._t[-1])
            q[2] = prev[2] + wrap_angle(q[2] - prev[2])
        if self._t and t <= self._t[-1]:
            self._t[-1], self._q[-1], self._qd[-1] = t, q, ugv.q_dot.copy()
            return
        self._t.append(float(t))
        self._q.append(q)
        self._qd.append(ugv.q_dot.copy())

    def __len__(self) -> int:
        return len(self._t)

    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.array(self._t), np.array(self._q).reshape(-1, 3), np.array(self._qd).reshape(-1, 3)

    def pose_at(self, t) -> np.ndarray:
        """Unwrapped poses (x, y, yaw), shape (..., 3)."""
        ts, qs, qds = self.segments()
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 1)
        return qs[idx] + qds[idx] * (t - ts[idx])[..., None]

    def state_at(self, t: float) -> UgvState:
        ts, _, qds = self.segments()
        idx = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 1))
        return UgvState(self.pose_at(t), qds[idx])


def sensor_to_world(points: np.ndarray, poses: np.ndarray, sensor_height: float) -> np.ndarray:
    """Sensor-frame points to world frame; ``poses`` is one (x, y, yaw) per point or a single pose."""
    points = np.asarray(points, dtype=float)
    poses = np.asarray(poses, dtype=float)
    c, s = np.cos(poses[..., 2]), np.sin(poses[..., 2])
    out = np.empty_like(points)
    out[..., 0] = c * points[..., 0] - s * points[..., 1] + poses[..., 0]
    out[..., 1] = s * points[..., 0] + c * points[..., 1] + poses[..., 1]
    out[..., 2] = points[..., 2] + sensor_height
    return out


def world_to_sensor(points: np.ndarray, poses: np.ndarray, sensor_height: float) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    poses = np.asarray(poses, dtype=float)
    c, s = np.cos(poses[..., 2]), np.sin(poses[..., 2])
    dx = points[..., 0] - poses[..., 0]
    dy = points[..., 1] - poses[..., 1]
    out = np.empty(np.broadcast_shapes(points.shape, poses.shape), dtype=float)
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    out[..., 2] = points[..., 2] - sensor_height
    return out


def sensor_origin(pose: np.ndarray, sensor_height: float) -> np.ndarray:
    pose = np.asarray(pose, dtype=float)
    return np.array([pose[0], pose[1], sensor_height])
