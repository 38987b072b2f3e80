"""Trajectory validation against the low-frequency accumulated cloud.

A Hermite spline through the tracked states predicts where the MAV box
should have left returns during an LF window. Those voxels are compared
with the voxels actually observed near the spline; a low overlap means the
track followed something that does not look like the MAV.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import ConfigError
from .hermite import HermiteTrajectory
from .integrator import Frame
from .kinematics import UgvPath
from .sensing import DensityModel
from .tracker import MavState, TrackRecord, ground_mask

_PACK_BITS = 21
_PACK_OFFSET = 1 << (_PACK_BITS - 1)


def fit_spline(history) -> HermiteTrajectory:
    """Hermite curve through the (t, p, v) of each state."""
    states = history.states if isinstance(history, TrackRecord) else list(history)
    if len(states) < 2:
        raise ValueError("need at least two states to fit a trajectory")
    t = np.array([s.t for s in states])
    if np.any(np.diff(t) <= 0):
        raise ValueError("state timestamps must be strictly increasing")
    return HermiteTrajectory(t, [s.p for s in states], [s.v for s in states])


class VoxelCloud:
    """Set of occupied voxels on a grid of pitch ``voxel_size`` anchored at ``origin``."""

    def __init__(self, voxel_size: float, keys=None, origin=(0.0, 0.0, 0.0)):
        if not voxel_size > 0:
            raise ConfigError(f"voxel_size must be positive, got {voxel_size}", "voxel_size")
        self.voxel_size = float(voxel_size)
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        keys = np.zeros((0, 3), dtype=np.int64) if keys is None else np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        if len(keys) and np.any(np.abs(keys) >= _PACK_OFFSET):
            raise ValueError("voxel coordinates out of range")
        self.keys = np.unique(keys, axis=0)

    @classmethod
    def from_points(cls, points, voxel_size: float, origin=(0.0, 0.0, 0.0)) -> "VoxelCloud":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        keys = np.floor((pts - np.asarray(origin, dtype=float)) / voxel_size).astype(np.int64)
        return cls(voxel_size, keys, origin)

    def __len__(self) -> int:
        return len(self.keys)

    def packed(self) -> np.ndarray:
        k = self.keys + _PACK_OFFSET
        return (k[:, 0] << (2 * _PACK_BITS)) | (k[:, 1] << _PACK_BITS) | k[:, 2]

    def centers(self) -> np.ndarray:
        return self.origin + (self.keys + 0.5) * self.voxel_size

    def union(self, other: "VoxelCloud") -> "VoxelCloud":
        _check_compatible(self, other)
        return VoxelCloud(self.voxel_size, np.vstack([self.keys, other.keys]), self.origin)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "z"])
            for c in self.centers():
                w.writerow([f"{x:.6f}" for x in c])


def _check_compatible(a: VoxelCloud, b: VoxelCloud) -> None:
    if a.voxel_size != b.voxel_size:
        raise ValueError(f"voxel sizes differ: {a.voxel_size} vs {b.voxel_size}")
    if not np.array_equal(a.origin, b.origin):
        raise ValueError("voxel grids have different origins")


def iou(a: VoxelCloud, b: VoxelCloud) -> float:
    _check_compatible(a, b)
    if len(a) == 0 and len(b) == 0:
        return 1.0
    pa, pb = a.packed(), b.packed()
    inter = len(np.intersect1d(pa, pb, assume_unique=True))
    return inter / (len(pa) + len(pb) - inter)


def _box_voxels(centers: np.ndarray, half: np.ndarray, voxel_size: float, origin: np.ndarray) -> np.ndarray:
    lo = np.floor((centers - half - origin) / voxel_size).astype(np.int64)
    hi = np.floor((centers + half - origin) / voxel_size).astype(np.int64)
    # boxes are at most a few voxels wide, so expand each one explicitly
    span = hi - lo + 1
    out = []
    for nx in range(int(span[:, 0].max()) if len(span) else 0):
        for ny in range(int(span[:, 1].max())):
            for nz in range(int(span[:, 2].max())):
                ok = (nx < span[:, 0]) & (ny < span[:, 1]) & (nz < span[:, 2])
                out.append(lo[ok] + np.array([nx, ny, nz]))
    return np.vstack(out) if out else np.zeros((0, 3), dtype=np.int64)


def sweep_times(t0: float, t1: float, dt: float) -> np.ndarray:
    n = max(int(math.floor((t1 - t0) / dt + 1e-9)), 0)
    t = t0 + np.arange(n + 1) * dt
    if t[-1] < t1 - 1e-12:
        t = np.append(t, t1)
    return t


def expected_cloud(traj: HermiteTrajectory, model: DensityModel, f_LF: float, sensor_poses,
                   half_extents, voxel_size: float = 0.15, t0: float | None = None,
                   t1: float | None = None, dt: float = 0.005, sensor_height: float = 0.45,
                   origin=None) -> VoxelCloud:
    """Voxels the MAV box should have lit during ``[t0, t1]``.

    The box is swept along ``traj``; a step contributes only where the
    density model expects at least one return. The relevant integration time
    is how long the box lingers over one voxel (``voxel_size / |v|``), capped
    by the LF window itself. Distances beyond the calibrated range expect
    nothing.

    ``sensor_poses`` is a :class:`UgvPath` or a callable ``t -> (x, y, yaw)``
    array.
    """
    t0 = traj.t_start if t0 is None else t0
    t1 = traj.t_end if t1 is None else t1
    if t0 < traj.t_start - 1e-9 or t1 > traj.t_end + 1e-9 or t1 < t0:
        raise ValueError(f"window [{t0}, {t1}] not covered by trajectory [{traj.t_start}, {traj.t_end}]")
    if not f_LF > 0:
        raise ConfigError("f_LF must be positive", "f_LF")
    t0, t1 = max(t0, traj.t_start), min(t1, traj.t_end)
    half = np.asarray(half_extents, dtype=float)
    origin = traj.evaluate(traj.t_start) if origin is None else np.asarray(origin, dtype=float)
    ts = sweep_times(t0, t1, dt)
    p = traj.evaluate(ts)
    speed = np.linalg.norm(traj.derivative(ts), axis=1)
    poses = sensor_poses.pose_at(ts) if isinstance(sensor_poses, UgvPath) else np.asarray(sensor_poses(ts))
    sensor = np.column_stack([poses[:, 0], poses[:, 1], np.full(len(ts), sensor_height)])
    d = np.linalg.norm(p - sensor, axis=1)
    with np.errstate(divide="ignore"):
        f_eff = np.maximum(speed / voxel_size, f_LF)
    mu, _ = model.expected_count(d, f_eff)
    ok = (np.asarray(mu) >= 1.0) & (d <= model.distances[-1])
    return VoxelCloud(voxel_size, _box_voxels(p[ok], half, voxel_size, origin), origin)


@dataclass(frozen=True)
class ValidatorConfig:
    voxel_size: float = 0.15  # m, about the MAV size
    threshold: float = 0.5
    sweep_dt: float = 0.005  # s
    corridor_radius: float = 0.5  # m
    ground_z: float = 0.0
    ground_margin: float = 0.3

    def __post_init__(self):
        if not self.voxel_size > 0 or not self.sweep_dt > 0 or not self.corridor_radius > 0:
            raise ConfigError("validator lengths must be positive", "validator")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("validator.threshold must lie in [0, 1]", "validator.threshold")


@dataclass
class ValidationReport:
    t_start: float
    t_end: float
    iou: float
    threshold: float
    accepted: bool
    n_expected_voxels: int
    n_observed_voxels: int
    n_corridor_points: int
    mean_spline_distance: float  # observed voxel centres to the spline, m
    expected: VoxelCloud = field(repr=False)
    observed: VoxelCloud = field(repr=False)

    def summary(self) -> dict:
        return {
            "t_start": round(self.t_start, 6), "t_end": round(self.t_end, 6),
            "iou": round(self.iou, 6), "threshold": self.threshold, "accepted": self.accepted,
            "n_expected_voxels": self.n_expected_voxels, "n_observed_voxels": self.n_observed_voxels,
            "n_corridor_points": self.n_corridor_points,
            "mean_spline_distance": None if math.isnan(self.mean_spline_distance)
            else round(self.mean_spline_distance, 6),
        }


def corridor_points(frame: Frame, traj: HermiteTrajectory, t0: float, t1: float, radius: float,
                    ground_z: float, ground_margin: float, step: float = 0.005) -> np.ndarray:
    """World-frame points of ``frame`` within ``radius`` of the spline over ``[t0, t1]``, ground removed."""
    ts = sweep_times(t0, t1, step)
    curve = traj.evaluate(ts)
    lo = curve.min(axis=0) - radius
    hi = curve.max(axis=0) + radius
    # coarse crop in the sensor frame using the bounding sphere of the corridor box
    ugv = frame.ugv
    odo = frame.odometry
    if odo is not None and len(odo):
        seg_t, seg_q, seg_qd = odo.segments()
    else:
        seg_t, seg_q, seg_qd = np.array([frame.t_start]), ugv.q[None, :], ugv.q_dot[None, :]
    world = np.empty_like(frame.xyz)
    _kernels.deskew_to_world(frame.xyz, frame.t, seg_t, seg_q, seg_qd, frame.sensor_height, world)
    mask = np.empty(len(world), dtype=np.bool_)
    _kernels.box_mask(world, lo, hi, mask)
    pts = world[mask]
    pts = pts[ground_mask(pts[:, 2], ground_z, ground_margin, float(curve[:, 2].min()))]
    if len(pts) == 0:
        return pts
    dist, _ = cKDTree(curve).query(pts)
    return pts[dist <= radius]


def validate(lf_frame: Frame, history, model: DensityModel, config: ValidatorConfig | None = None,
             mav_half_extents=(0.09, 0.09, 0.025)) -> ValidationReport:
    """Compare observed and expected MAV voxels over the LF frame window."""
    cfg = config or ValidatorConfig()
    states: list[MavState] = history.states if isinstance(history, TrackRecord) else list(history)
    t0, t1 = lf_frame.t_start, lf_frame.t_end
    window = [s for s in states if t0 <= s.t <= t1]
    if len(window) < 2:
        raise ValueError(f"history has fewer than two states in [{t0:.3f}, {t1:.3f}]")
    traj = fit_spline(window)
    a, b = traj.t_start, traj.t_end
    origin = traj.evaluate(a)
    expected = expected_cloud(traj, model, lf_frame.frequency, lf_frame.odometry or _static_poses(lf_frame),
                              mav_half_extents, cfg.voxel_size, a, b, cfg.sweep_dt,
                              lf_frame.sensor_height, origin)
    pts = corridor_points(lf_frame, traj, a, b, cfg.corridor_radius, cfg.ground_z, cfg.ground_margin,
                          cfg.sweep_dt)
    observed = VoxelCloud.from_points(pts, cfg.voxel_size, origin)
    score = iou(expected, observed)
    if len(observed):
        curve = traj.evaluate(sweep_times(a, b, cfg.sweep_dt))
        spline_dist = float(cKDTree(curve).query(observed.centers())[0].mean())
    else:
        spline_dist = math.nan
    return ValidationReport(t0, t1, score, cfg.threshold, score > cfg.threshold, len(expected),
                            len(observed), len(pts), spline_dist, expected, observed)


def _static_poses(frame: Frame):
    q = frame.ugv.q

    def poses(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(q, (*t.shape, 3))
    return poses
