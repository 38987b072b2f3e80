"""Synthetic world and lidar stream generation.

The world is a ground plane, a set of axis-aligned boxes (walls, columns)
and one small box for the MAV following a scripted trajectory. Rays from
the scan pattern are traced against it to give a timestamped point stream
in the sensor frame, with Gaussian range noise, reflectivity/distance
dependent dropout and spurious returns between the MAV and nearby surfaces.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .errors import ConfigError, TrajectoryRangeError
from .hermite import HermiteTrajectory
from .kinematics import UgvPath, UgvState, world_to_sensor
from .scan_pattern import ScanPatternConfig, sample_count

LABEL_GROUND = 0
LABEL_MAV = 1
LABEL_CLUTTER = 2
LABEL_OBSTACLE0 = _kernels.HIT_OBSTACLE0

GROUND_TRUTH_HEADER = ["t", "px", "py", "pz", "vx", "vy", "vz", "qx", "qy", "qyaw"]


# --------------------------------------------------------------------------
# trajectory scripts


class TrajectoryScript:
    """Ground-truth MAV motion. ``evaluate`` is vectorised over ``t``."""

    kind = "abstract"
    duration: float

    def evaluate(self, t):
        raise NotImplementedError

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-9) or np.any(t > self.duration + 1e-9):
            raise TrajectoryRangeError(f"t outside [0, {self.duration}] for {self.kind} trajectory")
        return np.clip(t, 0.0, self.duration)


@dataclass
class LinePath(TrajectoryScript):
    """Straight flight from ``start`` to ``end`` with speed ramping linearly in time."""

    start: np.ndarray
    end: np.ndarray
    speed_start: float
    speed_end: float | None = None
    kind = "line"

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)
        if self.speed_end is None:
            self.speed_end = self.speed_start
        self.length = float(np.linalg.norm(self.end - self.start))
        if self.length <= 0:
            raise ConfigError("line start and end coincide", "trajectory.end")
        if self.speed_start < 0 or self.speed_end < 0 or self.speed_start + self.speed_end <= 0:
            raise ConfigError("line speeds must be non-negative and not both zero", "trajectory.speed")
        self.duration = 2.0 * self.length / (self.speed_start + self.speed_end)
        self.direction = (self.end - self.start) / self.length

    def evaluate(self, t):
        t = self._check(t)
        accel = (self.speed_end - self.speed_start) / self.duration
        s = self.speed_start * t + 0.5 * accel * t * t
        speed = self.speed_start + accel * t
        return (self.start + s[..., None] * self.direction,
                speed[..., None] * self.direction + np.zeros_like(s)[..., None])


@dataclass
class CirclePath(TrajectoryScript):
    """Horizontal circle; angular speed ramps linearly over ``ramp_time`` then holds."""

    center: np.ndarray
    radius: float
    omega_start: float
    omega_end: float | None = None
    ramp_time: float = 0.0
    phase: float = 0.0
    duration: float = 60.0
    kind = "circle"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.omega_end is None:
            self.omega_end = self.omega_start
        if self.radius <= 0:
            raise ConfigError("circle radius must be positive", "trajectory.radius")
        if self.duration <= 0:
            raise ConfigError("trajectory duration must be positive", "trajectory.duration")

    def angle(self, t):
        t = np.asarray(t, dtype=float)
        w0, w1, tr = self.omega_start, self.omega_end, self.ramp_time
        if tr <= 0:
            return self.phase + w1 * t
        tc = np.minimum(t, tr)
        theta = w0 * tc + 0.5 * (w1 - w0) / tr * tc * tc
        return self.phase + theta + w1 * np.maximum(t - tr, 0.0)

    def omega(self, t):
        t = np.asarray(t, dtype=float)
        if self.ramp_time <= 0:
            return np.full_like(t, self.omega_end)
        frac = np.minimum(t, self.ramp_time) / self.ramp_time
        return self.omega_start + (self.omega_end - self.omega_start) * frac

    def revolutions(self, t) -> float:
        return float((self.angle(t) - self.phase) / (2.0 * math.pi))

    def evaluate(self, t):
        t = self._check(t)
        th = self.angle(t)
        w = self.omega(t)
        c, s = np.cos(th), np.sin(th)
        zero = np.zeros_like(th)
        pos = self.center + self.radius * np.stack([c, s, zero], axis=-1)
        vel = self.radius * w[..., None] * np.stack([-s, c, zero], axis=-1)
        return pos, vel


class WaypointPath(TrajectoryScript):
    """Hermite spline through timed waypoints; missing velocities come from central differences."""

    kind = "waypoint-spline"

    def __init__(self, t, p, v=None):
        t = np.asarray(t, dtype=float)
        p = np.asarray(p, dtype=float)
        if v is None:
            v = np.gradient(p, t, axis=0)
        if t[0] != 0.0:
            raise ConfigError("waypoint times must start at 0", "trajectory.knots")
        self.curve = HermiteTrajectory(t, p, v)
        self.duration = float(t[-1])

    def evaluate(self, t):
        t = self._check(t)
        return self.curve.evaluate(t), self.curve.derivative(t)


def hover_path(position, duration: float) -> WaypointPath:
    p = np.asarray(position, dtype=float)
    return WaypointPath([0.0, duration], [p, p], np.zeros((2, 3)))


def eval_trajectory(script: TrajectoryScript, t):
    """Position and velocity of the scripted MAV at ``t`` (scalar or array)."""
    p, v = script.evaluate(t)
    return p, v


# --------------------------------------------------------------------------
# scene description


@dataclass
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    reflectivity: float = 0.6

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if np.any(self.half_extents <= 0):
            raise ConfigError("box half-extents must be strictly positive", "obstacles.half_extents")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ConfigError("reflectivity must lie in [0, 1]", "obstacles.reflectivity")

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_extents

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_extents


@dataclass
class MavBody:
    trajectory: TrajectoryScript
    half_extents: np.ndarray = field(default_factory=lambda: np.array([0.09, 0.09, 0.025]))
    reflectivity: float = 0.3
    # visible only while start <= t < end (None: always)
    visible_until: float | None = None

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if np.any(self.half_extents <= 0):
            raise ConfigError("MAV half-extents must be strictly positive", "mav.half_extents")
        volume_cm3 = float(np.prod(2 * self.half_extents)) * 1e6
        if not 100.0 <= volume_cm3 <= 2000.0:
            raise ConfigError(f"MAV box volume {volume_cm3:.0f} cm^3 outside [100, 2000]", "mav.half_extents")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ConfigError("reflectivity must lie in [0, 1]", "mav.reflectivity")

    @property
    def diameter(self) -> float:
        return 2.0 * float(np.max(self.half_extents[:2]))


@dataclass
class NoiseConfig:
    range_sigma: float = 0.02  # m
    dropout_alpha: float = 0.5
    dropout_range: float = 90.0  # m
    dropout_max: float = 0.95
    clutter_rate: float = 50.0  # spurious points / s per MAV-surface proximity
    clutter_trigger_distance: float = 1.5  # m
    seed: int = 0

    def __post_init__(self):
        if self.range_sigma < 0:
            raise ConfigError("range_sigma must be >= 0", "noise.range_sigma")
        if not 0.0 <= self.dropout_max <= 1.0:
            raise ConfigError("dropout_max must lie in [0, 1]", "noise.dropout_max")
        if self.dropout_alpha < 0 or self.dropout_range <= 0:
            raise ConfigError("dropout_alpha must be >= 0 and dropout_range > 0", "noise.dropout_alpha")
        if self.clutter_rate < 0 or self.clutter_trigger_distance < 0:
            raise ConfigError("clutter parameters must be >= 0", "noise.clutter_rate")

    @classmethod
    def noiseless(cls) -> "NoiseConfig":
        return cls(range_sigma=0.0, dropout_alpha=0.0, clutter_rate=0.0)

    def dropout_prob(self, reflectivity, distance):
        refl = np.asarray(reflectivity, dtype=float)
        d = np.asarray(distance, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = self.dropout_alpha * d / (refl * self.dropout_range)
        p = np.where(refl > 0, p, self.dropout_max if self.dropout_alpha > 0 else 0.0)
        return np.clip(p, 0.0, self.dropout_max)


@dataclass
class Scene:
    ground_z: float | None = 0.0
    obstacles: list[Box] = field(default_factory=list)
    mav: MavBody | None = None
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    ground_reflectivity: float = 0.5
    sensor_height: float = 0.45  # lidar mount height above the UGV base

    def __post_init__(self):
        if not 0.0 <= self.ground_reflectivity <= 1.0:
            raise ConfigError("ground_reflectivity must lie in [0, 1]", "scene.ground_reflectivity")

    def box_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.obstacles:
            return np.zeros((0, 3)), np.zeros((0, 3))
        return np.array([b.lo for b in self.obstacles]), np.array([b.hi for b in self.obstacles])

    def reflectivity_of(self, labels: np.ndarray) -> np.ndarray:
        refl = np.full(labels.shape, self.ground_reflectivity)
        if self.mav is not None:
            refl[labels == LABEL_MAV] = self.mav.reflectivity
        for j, box in enumerate(self.obstacles):
            refl[labels == LABEL_OBSTACLE0 + j] = box.reflectivity
        return refl

    def mav_visible(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.mav is None:
            return np.zeros(t.shape, dtype=bool)
        if self.mav.visible_until is None:
            return np.ones(t.shape, dtype=bool)
        return t < self.mav.visible_until


# --------------------------------------------------------------------------
# single-ray casting


@dataclass(frozen=True)
class LidarPoint:
    position: np.ndarray  # sensor frame, m
    t: float
    range: float
    label: int


def ray_box_distance(origin, direction, lo, hi) -> np.ndarray:
    """Vectorised slab test: entry distance of each ray into box [lo, hi], inf on a miss."""
    o = np.atleast_2d(np.asarray(origin, dtype=float))
    d = np.atleast_2d(np.asarray(direction, dtype=float))
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    parallel = d == 0.0
    inside = (o >= lo) & (o <= hi)
    t1 = np.where(parallel, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(parallel, np.where(inside, np.inf, -np.inf), t2)
    tn = np.minimum(t1, t2).max(axis=-1)
    tf = np.maximum(t1, t2).min(axis=-1)
    hit = (tn <= tf) & (tf > 0) & ~np.any(parallel & ~inside, axis=-1)
    return np.where(hit, np.where(tn > 0, tn, tf), np.inf)


def cast_ray(scene: Scene, origin, sample, mav_position=None, yaw: float = 0.0,
             rng: np.random.Generator | None = None) -> LidarPoint | None:
    """Trace one ray; returns the nearest (noisy) return in the sensor frame or None.

    ``sample`` carries a sensor-frame direction and timestamp; ``yaw`` rotates
    it into the world. ``mav_position`` is the MAV box centre at the ray time.
    Noise and dropout follow ``scene.noise`` and need ``rng`` when active.
    """
    o = np.asarray(origin, dtype=float)
    d_s = np.asarray(sample.direction, dtype=float)
    c, s = math.cos(yaw), math.sin(yaw)
    d = np.array([c * d_s[0] - s * d_s[1], s * d_s[0] + c * d_s[1], d_s[2]])
    best, label = math.inf, None
    if scene.ground_z is not None and d[2] < 0:
        tg = (scene.ground_z - o[2]) / d[2]
        if tg > 0:
            best, label = tg, LABEL_GROUND
    for j, box in enumerate(scene.obstacles):
        tb = float(ray_box_distance(o, d, box.lo, box.hi)[0])
        if tb < best:
            best, label = tb, LABEL_OBSTACLE0 + j
    if scene.mav is not None and mav_position is not None and scene.mav_visible(sample.t):
        m = np.asarray(mav_position, dtype=float)
        tm = float(ray_box_distance(o, d, m - scene.mav.half_extents, m + scene.mav.half_extents)[0])
        if tm < best:
            best, label = tm, LABEL_MAV
    if label is None:
        return None
    noise = scene.noise
    r = best
    if noise.dropout_alpha > 0 or noise.range_sigma > 0:
        if rng is None:
            raise ValueError("an rng is required when noise or dropout is enabled")
        p_drop = float(noise.dropout_prob(scene.reflectivity_of(np.array([label]))[0], best))
        if rng.random() < p_drop:
            return None
        if noise.range_sigma > 0:
            r = max(best + rng.normal(0.0, noise.range_sigma), 0.0)
    return LidarPoint(position=r * d_s, t=float(sample.t), range=r, label=label)


# --------------------------------------------------------------------------
# streams


@dataclass
class StreamChunk:
    xyz: np.ndarray  # (N, 3) sensor frame
    t: np.ndarray  # (N,)
    labels: np.ndarray  # (N,) int16
    t_start: float
    t_end: float

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class PointStream:
    """Time-ordered returns in the sensor frame plus the odometry needed to place them."""

    xyz: np.ndarray
    t: np.ndarray
    labels: np.ndarray
    duration: float
    sensor_height: float
    odometry: UgvPath

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_chunks(cls, chunks: list[StreamChunk], duration, sensor_height, odometry) -> "PointStream":
        if chunks:
            xyz = np.concatenate([c.xyz for c in chunks])
            t = np.concatenate([c.t for c in chunks])
            labels = np.concatenate([c.labels for c in chunks])
        else:
            xyz, t, labels = np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int16)
        return cls(xyz, t, labels, duration, sensor_height, odometry)

    def chunks(self, dt: float = 0.01):
        """Re-slice the stream into consecutive time chunks (for feeding frame taps)."""
        n_chunks = int(math.ceil(self.duration / dt - 1e-9))
        edges = np.searchsorted(self.t, np.arange(n_chunks + 1) * dt, side="left")
        edges[-1] = len(self.t)
        for i in range(n_chunks):
            a, b = edges[i], edges[i + 1]
            yield StreamChunk(self.xyz[a:b], self.t[a:b], self.labels[a:b], i * dt,
                              min((i + 1) * dt, self.duration))


class GroundTruthLog:
    def __init__(self):
        self.rows: list[list[float]] = []

    def append(self, t: float, p, v, ugv: UgvState) -> None:
        p = np.zeros(3) if p is None else p
        v = np.zeros(3) if v is None else v
        self.rows.append([t, *map(float, p), *map(float, v), *map(float, ugv.q)])

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(GROUND_TRUTH_HEADER))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GROUND_TRUTH_HEADER)
            for row in self.rows:
                w.writerow([f"{x:.6f}" for x in row])


class StreamSimulator:
    """Chunk-by-chunk stream generation so a controller can steer the UGV between chunks.

    Samples sit on a global index grid (sample k fires at k / point_rate), and
    every chunk draws its noise from a generator keyed by (seed, first index),
    so a run is reproducible for a fixed chunk length.
    """

    def __init__(self, scene: Scene, cfg: ScanPatternConfig, seed: int | None = None,
                 chunk_dt: float = 0.01):
        self.scene = scene
        self.cfg = cfg
        self.seed = scene.noise.seed if seed is None else int(seed)
        self.chunk_n = max(1, sample_count(cfg.point_rate, chunk_dt))
        self.k = 0
        self.box_lo, self.box_hi = scene.box_arrays()
        self.odometry = UgvPath()
        self.ground_truth = GroundTruthLog()

    @property
    def t(self) -> float:
        return self.k / self.cfg.point_rate

    def _mav_sphere(self, t0: float, t1: float):
        mav = self.scene.mav
        if mav is None:
            return np.zeros(3), 0.0, False
        dur = mav.trajectory.duration
        ta, tb = min(t0, dur), min(t1, dur)
        vis = self.scene.mav_visible(np.array([ta]))[0]
        if not vis:
            return np.zeros(3), 0.0, False
        (pa, pb), _ = mav.trajectory.evaluate(np.array([ta, tb]))
        c = 0.5 * (pa + pb)
        # chord half-length plus box half-diagonal, padded for curvature within the chunk
        r = 0.5 * float(np.linalg.norm(pb - pa)) + float(np.linalg.norm(mav.half_extents))
        r = r * 1.5 + 1e-3
        return c, r, True

    def step(self, ugv: UgvState, n: int | None = None) -> StreamChunk:
        """Emit the next ``n`` samples (default one chunk) with the UGV moving at ``ugv.q_dot``."""
        cfg, scene = self.cfg, self.scene
        n = self.chunk_n if n is None else int(n)
        k0 = self.k
        t0 = k0 / cfg.point_rate
        t1 = (k0 + n) / cfg.point_rate
        self.odometry.append(t0, ugv)
        if scene.mav is not None:
            tt = min(t0, scene.mav.trajectory.duration)
            p, v = scene.mav.trajectory.evaluate(tt)
            self.ground_truth.append(t0, p, v, ugv)
        else:
            self.ground_truth.append(t0, None, None, ugv)

        t = np.empty(n)
        dirs = np.empty((n, 3))
        rng_ = np.empty(n)
        hit = np.empty(n, dtype=np.int64)
        cand = np.empty(n, dtype=np.bool_)
        sc, sr, has_sphere = self._mav_sphere(t0, t1)
        _kernels.cast_pattern(
            k0, n, float(cfg.point_rate), cfg.half_fov_h_rad, cfg.half_fov_v_rad,
            float(cfg.petal_freq_a), float(cfg.petal_freq_b), cfg.elevation_phase,
            t0, float(ugv.q[0]), float(ugv.q[1]), float(ugv.q[2]),
            float(ugv.q_dot[0]), float(ugv.q_dot[1]), float(ugv.q_dot[2]), float(scene.sensor_height),
            0.0 if scene.ground_z is None else float(scene.ground_z), scene.ground_z is not None,
            self.box_lo, self.box_hi, sc, sr, has_sphere,
            t, dirs, rng_, hit, cand,
        )
        labels = hit.astype(np.int16)
        if has_sphere and cand.any():
            self._cast_mav(ugv, t0, t, dirs, rng_, labels, np.flatnonzero(cand))

        valid = np.flatnonzero(labels >= 0)
        rng = np.random.default_rng([self.seed, k0])
        noise = scene.noise
        r = rng_[valid]
        lab = labels[valid]
        if noise.dropout_alpha > 0:
            keep = rng.random(len(valid)) >= noise.dropout_prob(scene.reflectivity_of(lab), r)
            valid, r, lab = valid[keep], r[keep], lab[keep]
        if noise.range_sigma > 0:
            r = np.maximum(r + rng.normal(0.0, noise.range_sigma, len(r)), 0.0)
        xyz = r[:, None] * dirs[valid]
        tt = t[valid]

        if noise.clutter_rate > 0 and scene.mav is not None and scene.obstacles:
            cx, ct = self._clutter(ugv, t0, t1, rng)
            if len(ct):
                xyz = np.concatenate([xyz, cx])
                tt = np.concatenate([tt, ct])
                lab = np.concatenate([lab, np.full(len(ct), LABEL_CLUTTER, dtype=np.int16)])
                order = np.argsort(tt, kind="stable")
                xyz, tt, lab = xyz[order], tt[order], lab[order]

        self.k = k0 + n
        return StreamChunk(xyz, tt, lab, t0, t1)

    def _cast_mav(self, ugv, t0, t, dirs, ranges, labels, idx):
        mav = self.scene.mav
        ts = t[idx]
        in_time = (ts <= mav.trajectory.duration) & self.scene.mav_visible(ts)
        idx, ts = idx[in_time], ts[in_time]
        if len(idx) == 0:
            return
        centers, _ = mav.trajectory.evaluate(ts)
        dt = ts - t0
        yaw = ugv.q[2] + ugv.q_dot[2] * dt
        c, s = np.cos(yaw), np.sin(yaw)
        d_s = dirs[idx]
        d_w = np.stack([c * d_s[:, 0] - s * d_s[:, 1], s * d_s[:, 0] + c * d_s[:, 1], d_s[:, 2]], axis=1)
        o = np.stack([ugv.q[0] + ugv.q_dot[0] * dt, ugv.q[1] + ugv.q_dot[1] * dt,
                      np.full(len(dt), self.scene.sensor_height)], axis=1)
        tm = ray_box_distance(o, d_w, centers - mav.half_extents, centers + mav.half_extents)
        closer = tm < ranges[idx]
        ranges[idx[closer]] = tm[closer]
        labels[idx[closer]] = LABEL_MAV

    def _clutter(self, ugv, t0, t1, rng):
        """Spurious returns on the gap between the MAV box and any obstacle closer than the trigger."""
        scene, noise, mav = self.scene, self.scene.noise, self.scene.mav
        tm = min(0.5 * (t0 + t1), mav.trajectory.duration)
        if not scene.mav_visible(np.array([tm]))[0]:
            return np.zeros((0, 3)), np.zeros(0)
        (center,), _ = mav.trajectory.evaluate(np.array([tm]))
        m_lo, m_hi = center - mav.half_extents, center + mav.half_extents
        out_p, out_t = [], []
        for box in scene.obstacles:
            q_obs = np.clip(center, box.lo, box.hi)
            q_mav = np.clip(q_obs, m_lo, m_hi)
            gap = float(np.linalg.norm(q_obs - q_mav))
            if gap >= noise.clutter_trigger_distance or gap == 0.0:
                continue
            k = rng.poisson(noise.clutter_rate * (t1 - t0))
            if k == 0:
                continue
            frac = rng.random(k)
            pts = q_mav + frac[:, None] * (q_obs - q_mav)
            if noise.range_sigma > 0:
                pts = pts + rng.normal(0.0, noise.range_sigma, (k, 3))
            out_p.append(pts)
            out_t.append(t0 + rng.random(k) * (t1 - t0))
        if not out_p:
            return np.zeros((0, 3)), np.zeros(0)
        pts = np.concatenate(out_p)
        ts = np.concatenate(out_t)
        poses = ugv.q + ugv.q_dot * (ts - t0)[:, None]
        local = world_to_sensor(pts, poses, scene.sensor_height)
        az = np.degrees(np.arctan2(local[:, 1], local[:, 0]))
        el = np.degrees(np.arctan2(local[:, 2], np.hypot(local[:, 0], local[:, 1])))
        inside = (np.abs(az) <= self.cfg.fov_h / 2) & (np.abs(el) <= self.cfg.fov_v / 2)
        return local[inside], ts[inside]


UgvSchedule = Callable[[float], UgvState]


def simulate_stream(scene: Scene, ugv: UgvState | UgvSchedule, cfg: ScanPatternConfig,
                    duration: float, seed: int | None = None, chunk_dt: float = 0.01):
    """Open-loop stream over ``[0, duration)``.

    ``ugv`` is either a fixed state (integrated at its own ``q_dot``) or a
    schedule ``t -> UgvState`` queried at each chunk start. Returns the
    stream and its ground-truth log.
    """
    if not duration > 0:
        raise ConfigError(f"duration must be positive, got {duration}", "duration")
    sim = StreamSimulator(scene, cfg, seed, chunk_dt)
    total = sample_count(cfg.point_rate, duration)
    state = ugv if isinstance(ugv, UgvState) else None
    chunks = []
    while sim.k < total:
        n = min(sim.chunk_n, total - sim.k)
        if state is None or not isinstance(ugv, UgvState):
            current = ugv(sim.t) if not isinstance(ugv, UgvState) else ugv
        else:
            current = state
        chunk = sim.step(current, n)
        chunks.append(chunk)
        if isinstance(ugv, UgvState):
            state = current.advanced(chunk.t_end - chunk.t_start)
    stream = PointStream.from_chunks(chunks, duration, scene.sensor_height, sim.odometry)
    return stream, sim.ground_truth
