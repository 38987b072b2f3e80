"""MAV tracking with adaptive scan integration.

Per frame: crop around the predicted position, undo UGV motion point by
point, drop the ground, gather neighbours within a speed-dependent radius
and take their centroid. HF and MF estimates are fused by point count,
velocity comes from smoothed finite differences of the fused track, and the
integration rates and UGV command are recomputed after every fused update.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import ConfigError, TrackMiss
from .integrator import Frame, Modality, RateSet
from .kinematics import UgvState, wrap_angle
from .scan_pattern import ScanPatternConfig
from .sensing import CountThresholds, DensityModel

TRACK_HEADER = ["t", "modality", "px", "py", "pz", "vx", "vy", "vz", "n_points", "f_HF", "f_MF", "lost"]


@dataclass
class MavState:
    p: np.ndarray
    v: np.ndarray
    t: float
    n_points: int
    modality: Modality = Modality.FUSED
    t_obs: float | None = None  # mean timestamp of the supporting points
    integration_time: float | None = None  # frame length for raw estimates

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.modality = Modality(self.modality)
        if self.t_obs is None:
            self.t_obs = self.t

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.v))


@dataclass(frozen=True)
class TrackerConfig:
    thresholds: CountThresholds = field(default_factory=CountThresholds)
    ground_z: float = 0.0
    ground_margin: float = 0.3  # m
    search_radius_base: float = 0.5  # m
    search_radius_speed_gain: float = 1.0  # radius grows by gain * |v| * I
    search_radius_coast_gain: float = 0.5  # extra gain * |v| * (time since the last observation)
    search_radius_max: float = 1.0  # m
    lost_timeout: float = 1.0  # s
    fov_margin: float = 5.0  # deg
    v_max: float = 10.0  # m/s
    velocity_beta: float = 0.6  # weight on the previous velocity
    velocity_window: float = 0.4  # s, finite-difference baseline
    count_gate_sigmas: float | None = None  # reject extractions above mu + k*sigma; off by default
    size_gate: float | None = 1.0  # reject when the p90 spread about the centroid exceeds this * mav_diameter
    c_blur: float = 1.0
    mav_diameter: float = 0.18  # m
    k_yaw: float = 1.0  # 1/s
    yaw_rate_max: float = 1.0  # rad/s
    k_drive: float = 2.0  # m/s per rad of elevation excess
    drive_speed_max: float = 0.5  # m/s

    def __post_init__(self):
        for key in ("ground_margin", "search_radius_base", "lost_timeout", "fov_margin", "v_max",
                    "velocity_window", "c_blur", "mav_diameter", "k_yaw",
                    "yaw_rate_max", "drive_speed_max", "k_drive"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"tracker.{key} must be positive", f"tracker.{key}")
        for key in ("count_gate_sigmas", "size_gate"):
            if getattr(self, key) is not None and not getattr(self, key) > 0:
                raise ConfigError(f"tracker.{key} must be positive or null", f"tracker.{key}")
        for key in ("search_radius_speed_gain", "search_radius_coast_gain"):
            if getattr(self, key) < 0:
                raise ConfigError(f"tracker.{key} must be >= 0", f"tracker.{key}")
        if self.search_radius_max < self.search_radius_base:
            raise ConfigError("tracker.search_radius_max must be >= search_radius_base", "tracker.search_radius_max")
        if not 0.0 <= self.velocity_beta < 1.0:
            raise ConfigError("tracker.velocity_beta must lie in [0, 1)", "tracker.velocity_beta")


# ---------------------------------------------------------------------------
# per-frame operations


def ground_mask(z_world, ground_z: float, margin: float, last_mav_altitude: float) -> np.ndarray:
    """True for points kept by ground removal."""
    cut = min(ground_z + margin, last_mav_altitude - margin)
    return np.asarray(z_world) >= cut


def ground_removal(frame: Frame, ugv: UgvState, last_mav_altitude: float,
                   ground_z: float = 0.0, margin: float = 0.3) -> Frame:
    # no pitch or roll: world z only depends on the mount height, not on ``ugv``
    z = frame.xyz[:, 2] + frame.sensor_height
    return frame.subset(ground_mask(z, ground_z, margin, last_mav_altitude))


class RadiusIndex:
    """k-d tree with exact closed-ball radius queries."""

    def __init__(self, points):
        self.points = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self) -> int:
        return len(self.points)

    def query(self, center, radius: float) -> np.ndarray:
        """Sorted indices of points with squared distance <= radius**2."""
        if self._tree is None or radius < 0:
            return np.zeros(0, dtype=np.int64)
        c = np.asarray(center, dtype=float)
        # the tree's own distance test may round differently; over-fetch and re-test
        cand = np.asarray(self._tree.query_ball_point(c, radius * (1 + 1e-9) + 1e-12), dtype=np.int64)
        if len(cand) == 0:
            return cand
        d = self.points[cand] - c
        keep = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2] <= radius * radius
        return np.sort(cand[keep])


def build_index(frame_or_points) -> RadiusIndex:
    pts = frame_or_points.xyz if isinstance(frame_or_points, Frame) else frame_or_points
    return RadiusIndex(pts)


def predict(p_prev, v_prev, f: float) -> np.ndarray:
    """Constant-velocity prediction one frame period ahead."""
    if not f > 0:
        raise ConfigError(f"frequency must be positive, got {f}", "f")
    return np.asarray(p_prev, dtype=float) + np.asarray(v_prev, dtype=float) / f


def search_radius(cfg: TrackerConfig, speed: float, f: float) -> float:
    return cfg.search_radius_base + cfg.search_radius_speed_gain * speed / f


def extract_mav(index: RadiusIndex, p_hat, radius: float) -> np.ndarray:
    if not radius > 0:
        raise ConfigError(f"search radius must be positive, got {radius}", "radius")
    return index.points[index.query(p_hat, radius)]


def centroid(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("centroid of an empty point set")
    return pts.mean(axis=0)


def spread(points, q: float = 90.0) -> float:
    """``q``-th percentile distance of the points from their centroid."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return float(np.percentile(np.linalg.norm(pts - centroid(pts), axis=1), q))


def fuse(est_mf: MavState | None, est_hf: MavState | None) -> MavState:
    """Point-count weighted combination of the available estimates.

    Position and observation time are averaged with the same weights, so for
    a target in uniform motion the fused point lies on the true path.
    Velocity is passed through the same weighting; the tracker replaces it
    with its filtered estimate.
    """
    ests = [e for e in (est_mf, est_hf) if e is not None]
    if not ests:
        raise TrackMiss("no estimate to fuse")
    if len(ests) == 1:
        e = ests[0]
        return MavState(e.p.copy(), e.v.copy(), e.t, e.n_points, Modality.FUSED, e.t_obs)
    w = np.array([e.n_points for e in ests], dtype=float)
    w = w / w.sum()
    p = sum(wi * e.p for wi, e in zip(w, ests))
    v = sum(wi * e.v for wi, e in zip(w, ests))
    t_obs = float(sum(wi * e.t_obs for wi, e in zip(w, ests)))
    return MavState(p, v, max(e.t for e in ests), int(sum(e.n_points for e in ests)), Modality.FUSED, t_obs)


def sensor_distance(p, ugv: UgvState, sensor_height: float) -> float:
    return float(np.linalg.norm(np.asarray(p, dtype=float) - np.array([ugv.q[0], ugv.q[1], sensor_height])))


@dataclass(frozen=True)
class RateDecision:
    rates: RateSet
    f_density_HF: float
    f_blur: float
    insufficient_HF: bool
    insufficient_MF: bool
    distance: float


def adjust_rates(state: MavState, ugv: UgvState, model: DensityModel, thresholds: CountThresholds,
                 cfg: TrackerConfig | None = None, sensor_height: float = 0.45,
                 f_LF: float = 0.5) -> RateDecision:
    """Fastest rates the expected density supports, with HF held above the motion-blur floor."""
    cfg = cfg or TrackerConfig()
    d = sensor_distance(state.p, ugv, sensor_height)
    f_mf, low_mf = model.min_frequency_for_count(d, thresholds.n_min_MF, (5.0, 20.0))
    f_den, low_hf = model.min_frequency_for_count(d, thresholds.n_min_HF, (20.0, 100.0))
    f_blur = state.speed / (cfg.c_blur * cfg.mav_diameter)
    f_hf = min(max(f_den, f_blur, 20.0), 100.0)
    return RateDecision(RateSet(f_hf, f_mf, f_LF), f_den, f_blur, low_hf, low_mf, d)


def mav_angles(p, ugv: UgvState, sensor_height: float) -> tuple[float, float]:
    """Azimuth and elevation (rad) of world point ``p`` in the sensor frame."""
    dx, dy = p[0] - ugv.q[0], p[1] - ugv.q[1]
    az = wrap_angle(math.atan2(dy, dx) - ugv.q[2])
    el = math.atan2(p[2] - sensor_height, math.hypot(dx, dy))
    return float(az), el


def ugv_control(state: MavState, ugv: UgvState, fov: ScanPatternConfig, fov_margin: float,
                cfg: TrackerConfig | None = None, sensor_height: float = 0.45) -> np.ndarray:
    """World-frame (vx, vy, yaw_rate) command keeping the MAV inside the FoV.

    Yaw follows azimuth proportionally. Translation engages only when the
    elevation comes within ``fov_margin`` of the vertical edge, backing off
    along the heading to flatten the viewing angle.
    """
    cfg = cfg or TrackerConfig()
    az, el = mav_angles(state.p, ugv, sensor_height)
    yaw_rate = float(np.clip(cfg.k_yaw * az, -cfg.yaw_rate_max, cfg.yaw_rate_max))
    limit = math.radians(fov.fov_v / 2.0 - fov_margin)
    excess = abs(el) - limit
    forward = 0.0
    if excess > 0:
        forward = -min(cfg.k_drive * excess, cfg.drive_speed_max)
    yaw = ugv.q[2]
    return np.array([forward * math.cos(yaw), forward * math.sin(yaw), yaw_rate])


# ---------------------------------------------------------------------------
# record


@dataclass
class FrameDiagnostics:
    modality: Modality
    t_start: float
    integration_time: float
    radius: float
    n_points: int
    mu_expected: float
    sigma_expected: float
    accepted: bool
    reason: str  # "ok", "empty", "sparse" (below the count floor), "gate" (too many), "size" (too wide)


@dataclass
class TrackRecord:
    states: list[MavState] = field(default_factory=list)
    raw: dict = field(default_factory=lambda: {Modality.HF: [], Modality.MF: []})
    diagnostics: list[FrameDiagnostics] = field(default_factory=list)
    rates: list[tuple[float, float, float]] = field(default_factory=list)  # (t, f_HF, f_MF) after each update
    commands: list[tuple[float, float, float, float]] = field(default_factory=list)
    lost: bool = False
    t_lost: float | None = None

    def append(self, state: MavState) -> None:
        if self.states and state.t <= self.states[-1].t:
            raise ValueError("track states must have strictly increasing timestamps")
        self.states.append(state)

    @property
    def last(self) -> MavState | None:
        return self.states[-1] if self.states else None

    def window(self, t0: float, t1: float) -> list[MavState]:
        return [s for s in self.states if t0 <= s.t <= t1]

    def arrays(self, modality: Modality = Modality.FUSED):
        src = self.states if modality == Modality.FUSED else self.raw[Modality(modality)]
        t = np.array([s.t for s in src])
        p = np.array([s.p for s in src]).reshape(-1, 3)
        v = np.array([s.v for s in src]).reshape(-1, 3)
        n = np.array([s.n_points for s in src], dtype=int)
        t_obs = np.array([s.t_obs for s in src])
        return t, p, v, n, t_obs

    def csv_rows(self) -> list[list]:
        rate_t = np.array([r[0] for r in self.rates])

        def rates_at(t):
            if not len(rate_t):
                return math.nan, math.nan
            i = max(int(np.searchsorted(rate_t, t, side="right")) - 1, 0)
            return self.rates[i][1], self.rates[i][2]

        rows = []
        entries = [(s.t, 0, s) for s in self.states]
        entries += [(s.t, 1, s) for s in self.raw[Modality.MF]] + [(s.t, 2, s) for s in self.raw[Modality.HF]]
        entries.sort(key=lambda e: (e[0], e[1]))
        for t, _, s in entries:
            fh, fm = rates_at(t)
            rows.append([f"{t:.6f}", s.modality.value, *(f"{x:.6f}" for x in s.p), *(f"{x:.6f}" for x in s.v),
                         s.n_points, f"{fh:.6f}", f"{fm:.6f}", 0])
        if self.lost and self.states:
            s = self.states[-1]
            fh, fm = rates_at(self.t_lost)
            rows.append([f"{self.t_lost:.6f}", Modality.FUSED.value, *(f"{x:.6f}" for x in s.p),
                         *(f"{x:.6f}" for x in s.v), 0, f"{fh:.6f}", f"{fm:.6f}", 1])
        return rows

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACK_HEADER)
            w.writerows(self.csv_rows())


# ---------------------------------------------------------------------------
# stateful tracker


class VelocityFilter:
    """Finite difference over a sliding baseline, then exponential smoothing."""

    def __init__(self, beta: float, window: float, v_max: float, v0=None):
        self.beta, self.window, self.v_max = beta, window, v_max
        self.v = np.zeros(3) if v0 is None else np.asarray(v0, dtype=float).copy()
        self._hist: deque[tuple[float, np.ndarray]] = deque()

    def update(self, t: float, p: np.ndarray) -> np.ndarray:
        self._hist.append((t, p.copy()))
        while len(self._hist) > 2 and t - self._hist[1][0] >= self.window:
            self._hist.popleft()
        t0, p0 = self._hist[0]
        # short baselines are mostly noise; wait for half a window
        if t - t0 >= 0.5 * self.window:
            raw = (p - p0) / (t - t0)
            self.v = self.beta * self.v + (1.0 - self.beta) * raw
            speed = float(np.linalg.norm(self.v))
            if speed > self.v_max:
                self.v *= self.v_max / speed
        return self.v.copy()


@dataclass
class Extraction:
    points: np.ndarray  # world frame
    t: np.ndarray
    p_hat: np.ndarray
    radius: float


class Tracker:
    """Closed-loop tracker state. Feed frames in order of their end time.

    In adaptive mode HF frames produce fused states (combined with the most
    recent unused MF estimate); in fixed mode every frame fuses on its own.
    """

    def __init__(self, p0, model: DensityModel, cfg: TrackerConfig | None = None,
                 fov: ScanPatternConfig | None = None, mode: str = "adaptive",
                 t0: float = 0.0, v0=None, sensor_height: float = 0.45, f_LF: float = 0.5):
        self.cfg = cfg or TrackerConfig()
        self.model = model
        self.fov = fov or ScanPatternConfig()
        self.mode, self.fixed_rate = parse_mode(mode)
        self.sensor_height = sensor_height
        self.f_LF = f_LF
        self.record = TrackRecord()
        self.velocity = VelocityFilter(self.cfg.velocity_beta, self.cfg.velocity_window, self.cfg.v_max, v0)
        self._p = np.asarray(p0, dtype=float).copy()
        self._t_obs = t0
        self._t_last_accept = t0
        self._pending_mf: MavState | None = None
        self.rates = RateSet() if self.fixed_rate is None else None

    # -- helpers -----------------------------------------------------------
    @property
    def lost(self) -> bool:
        return self.record.lost

    def position_at(self, t: float) -> np.ndarray:
        return self._p + self.velocity.v * (t - self._t_obs)

    def _extract(self, frame: Frame) -> tuple[Extraction, np.ndarray]:
        cfg = self.cfg
        t_mid = frame.t_start + 0.5 * frame.integration_time
        p_hat = self.position_at(t_mid)
        speed = float(np.linalg.norm(self.velocity.v))
        radius = search_radius(cfg, speed, frame.frequency)
        # widen while coasting: straight-line prediction drifts off curved paths
        stale = max(frame.t_start - self._t_obs, 0.0)
        grown = radius + cfg.search_radius_coast_gain * speed * stale
        radius = max(radius, min(grown, cfg.search_radius_max))
        # crop in the sensor frame at t_start, padded by how far the UGV can move the scene
        ugv = frame.ugv
        c, s = math.cos(ugv.q[2]), math.sin(ugv.q[2])
        dx, dy = p_hat[0] - ugv.q[0], p_hat[1] - ugv.q[1]
        ps = np.array([c * dx + s * dy, -s * dx + c * dy, p_hat[2] - frame.sensor_height])
        dur = frame.integration_time
        pad = (radius + float(np.hypot(ugv.q_dot[0], ugv.q_dot[1])) * dur
               + abs(ugv.q_dot[2]) * dur * float(np.linalg.norm(ps[:2])) + 0.05)
        mask = np.empty(len(frame), dtype=np.bool_)
        _kernels.box_mask(frame.xyz, ps - pad, ps + pad, mask)
        xyz, t = frame.xyz[mask], frame.t[mask]
        world = np.empty_like(xyz)
        if frame.odometry is not None and len(frame.odometry):
            seg_t, seg_q, seg_qd = frame.odometry.segments()
        else:
            seg_t, seg_q, seg_qd = np.array([frame.t_start]), ugv.q[None, :], ugv.q_dot[None, :]
        _kernels.deskew_to_world(xyz, t, seg_t, seg_q, seg_qd, frame.sensor_height, world)
        keep = ground_mask(world[:, 2], cfg.ground_z, cfg.ground_margin, float(self._p[2]))
        world, t = world[keep], t[keep]
        idx = RadiusIndex(world).query(p_hat, radius)
        return Extraction(world[idx], t[idx], p_hat, radius), p_hat

    def _estimate(self, frame: Frame, modality: Modality) -> MavState | None:
        ex, p_hat = self._extract(frame)
        n = len(ex.points)
        ugv = frame.ugv
        d = sensor_distance(p_hat, ugv, frame.sensor_height)
        mu, sd = self.model.expected_count(d, frame.frequency)
        cfg = self.cfg
        n_min = cfg.thresholds.n_min_HF if modality == Modality.HF else cfg.thresholds.n_min_MF
        if n == 0:
            reason = "empty"
        elif n < n_min:
            reason = "sparse"
        elif cfg.count_gate_sigmas is not None and n > mu + cfg.count_gate_sigmas * sd:
            reason = "gate"
        elif cfg.size_gate is not None and spread(ex.points) > cfg.size_gate * cfg.mav_diameter:
            reason = "size"
        else:
            reason = "ok"
        self.record.diagnostics.append(FrameDiagnostics(modality, frame.t_start, frame.integration_time,
                                                        ex.radius, n, mu, sd, reason == "ok", reason))
        if reason != "ok":
            return None
        p = centroid(ex.points)
        est = MavState(p, self.velocity.v, frame.t_end, n, modality, float(ex.t.mean()), frame.integration_time)
        self.record.raw[modality].append(est)
        return est

    def _commit(self, est: MavState, ugv: UgvState) -> MavState:
        v = self.velocity.update(est.t_obs, est.p)
        self._p, self._t_obs = est.p.copy(), est.t_obs
        self._t_last_accept = est.t
        p_report = est.p + v * (est.t - est.t_obs)
        state = MavState(p_report, v, est.t, est.n_points, Modality.FUSED, est.t_obs)
        self.record.append(state)
        return state

    def _check_lost(self, t: float) -> None:
        if not self.record.lost and t - self._t_last_accept >= self.cfg.lost_timeout:
            self.record.lost = True
            self.record.t_lost = self._t_last_accept + self.cfg.lost_timeout

    # -- main entry --------------------------------------------------------
    def track_step(self, frame: Frame, ugv_now: UgvState | None = None) -> tuple[RateSet | None, np.ndarray | None]:
        """Process one completed frame. Returns the rates and UGV command to apply next
        (None for either when nothing changed or the track is lost)."""
        if self.record.lost:
            return None, None
        ugv_now = frame.ugv if ugv_now is None else ugv_now
        fused = None
        if self.fixed_rate is not None:
            modality = Modality.HF if frame.frequency > 20.0 else Modality.MF
            est = self._estimate(frame, modality)
            if est is not None:
                fused = fuse(est, None) if modality == Modality.MF else fuse(None, est)
        elif frame.modality == Modality.MF:
            self._pending_mf = self._estimate(frame, Modality.MF)
            return None, None
        elif frame.modality == Modality.HF:
            est = self._estimate(frame, Modality.HF)
            mf, self._pending_mf = self._pending_mf, None
            if est is not None or mf is not None:
                fused = fuse(mf, est)
                fused.t = frame.t_end
        else:
            raise ConfigError(f"tracker does not consume {frame.modality.value} frames", "modality")

        if fused is None:
            self._check_lost(frame.t_end)
            if self.record.lost:
                return None, np.zeros(3)
            return None, None
        state = self._commit(fused, ugv_now)
        if self.fixed_rate is None:
            decision = adjust_rates(state, ugv_now, self.model, self.cfg.thresholds, self.cfg,
                                    self.sensor_height, self.f_LF)
            self.rates = decision.rates
            self.record.rates.append((state.t, self.rates.f_HF, self.rates.f_MF))
        else:
            self.record.rates.append((state.t, self.fixed_rate, self.fixed_rate))
        q_dot = ugv_control(state, ugv_now, self.fov, self.cfg.fov_margin, self.cfg, self.sensor_height)
        self.record.commands.append((state.t, *map(float, q_dot)))
        return self.rates, q_dot


def parse_mode(mode: str) -> tuple[str, float | None]:
    """``"adaptive"`` or ``"fixed:<Hz>"``."""
    mode = str(mode).strip()
    if mode == "adaptive":
        return mode, None
    if mode.startswith("fixed:"):
        try:
            f = float(mode.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad rate in mode '{mode}'", "mode") from None
        if not (0.0 < f <= 100.0) or not math.isfinite(f):
            raise ConfigError(f"fixed rate must lie in (0, 100] Hz, got {f}", "mode")
        return f"fixed:{f:g}", f
    raise ConfigError(f"unknown mode '{mode}' (expected adaptive or fixed:<Hz>)", "mode")
