"""Non-repetitive solid-state lidar scan pattern.

Ray directions follow two sinusoids whose frequencies differ by the golden
ratio, so the azimuth/elevation curve never closes and longer integration
windows cover more of the field of view.

Sensor frame: x forward, y left, z up. Azimuth is measured from +x towards
+y, elevation from the xy-plane towards +z.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0

# Rays per second emitted by the simulated device. Chosen so the on-target
# point counts reach the 4/20-point tracking thresholds at the working
# distances; see README "Simulated sensor".
DEFAULT_POINT_RATE = 6_000_000.0

# Samples processed per block when a window is too long to hold at once.
_BLOCK = 2_000_000


@dataclass(frozen=True)
class ScanPatternConfig:
    fov_h: float = 81.7  # deg
    fov_v: float = 25.1  # deg
    point_rate: float = DEFAULT_POINT_RATE  # points / s
    petal_freq_a: float = 200.0  # Hz, azimuth oscillation
    phase: float | None = None  # rad, elevation phase; derived from seed when None
    seed: int = 0

    def __post_init__(self):
        for key in ("fov_h", "fov_v"):
            val = getattr(self, key)
            if not (0.0 < val < 180.0):
                raise ConfigError(f"{key} must lie in (0, 180) degrees, got {val}", key)
        if not self.point_rate > 0:
            raise ConfigError(f"point_rate must be positive, got {self.point_rate}", "point_rate")
        if not self.petal_freq_a > 0:
            raise ConfigError(f"petal_freq_a must be positive, got {self.petal_freq_a}", "petal_freq_a")

    @property
    def petal_freq_b(self) -> float:
        """Elevation oscillation frequency; golden-ratio multiple of ``petal_freq_a``."""
        return self.petal_freq_a * GOLDEN_RATIO

    @property
    def elevation_phase(self) -> float:
        if self.phase is not None:
            return float(self.phase)
        return float(np.random.default_rng(self.seed).uniform(0.0, 2.0 * math.pi))

    @property
    def half_fov_h_rad(self) -> float:
        return math.radians(self.fov_h) / 2.0

    @property
    def half_fov_v_rad(self) -> float:
        return math.radians(self.fov_v) / 2.0


@dataclass(frozen=True)
class RaySample:
    direction: np.ndarray  # unit 3-vector, sensor frame
    t: float  # s


class RayBatch(Sequence):
    """Vectorised sequence of :class:`RaySample` (``t`` shape (N,), ``directions`` shape (N, 3))."""

    def __init__(self, t: np.ndarray, directions: np.ndarray):
        self.t = t
        self.directions = directions

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return RayBatch(self.t[i], self.directions[i])
        return RaySample(self.directions[i].copy(), float(self.t[i]))


def pattern_angles(cfg: ScanPatternConfig, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth and elevation (radians) of the scan curve at times ``t``."""
    t = np.asarray(t, dtype=float)
    u = cfg.half_fov_h_rad * np.sin(2.0 * math.pi * cfg.petal_freq_a * t)
    v = cfg.half_fov_v_rad * np.sin(2.0 * math.pi * cfg.petal_freq_b * t + cfg.elevation_phase)
    return u, v


def angles_to_directions(az: np.ndarray, el: np.ndarray) -> np.ndarray:
    cos_el = np.cos(el)
    return np.stack([cos_el * np.cos(az), cos_el * np.sin(az), np.sin(el)], axis=-1)


def azimuth(direction: np.ndarray) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    return np.arctan2(d[..., 1], d[..., 0])


def elevation(direction: np.ndarray) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    horiz = np.hypot(d[..., 0], d[..., 1])
    return np.arctan2(d[..., 2], horiz)


def sample_count(point_rate: float, dt: float) -> int:
    # the epsilon keeps products like 240000 * 0.01 from rounding down
    return int(math.floor(point_rate * dt * (1.0 + 1e-12)))


def sample_directions(cfg: ScanPatternConfig, t0: float, dt: float) -> RayBatch:
    """Rays emitted in ``[t0, t0 + dt)``, one every ``1 / point_rate`` seconds."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}", "dt")
    n = sample_count(cfg.point_rate, dt)
    t = t0 + np.arange(n, dtype=float) / cfg.point_rate
    u, v = pattern_angles(cfg, t)
    return RayBatch(t, angles_to_directions(u, v))


def _grid_shape(cfg: ScanPatternConfig, grid: float) -> tuple[int, int]:
    if not grid > 0 or grid >= cfg.fov_h or grid >= cfg.fov_v:
        raise ConfigError(f"grid must be positive and smaller than both FoV extents, got {grid}", "grid")
    return int(math.ceil(cfg.fov_h / grid - 1e-9)), int(math.ceil(cfg.fov_v / grid - 1e-9))


def visited_cells(cfg: ScanPatternConfig, t0: float, dt: float, grid: float = 1.0) -> np.ndarray:
    """Boolean (n_h, n_v) mask of angular cells hit by at least one ray in the window."""
    n_h, n_v = _grid_shape(cfg, grid)
    n = max(1, sample_count(cfg.point_rate, dt)) if dt > 0 else 1
    seen = np.zeros(n_h * n_v, dtype=bool)
    for start in range(0, n, _BLOCK):
        k = np.arange(start, min(n, start + _BLOCK), dtype=float)
        u, v = pattern_angles(cfg, t0 + k / cfg.point_rate)
        iu = np.clip(np.floor((np.degrees(u) + cfg.fov_h / 2.0) / grid).astype(np.int64), 0, n_h - 1)
        iv = np.clip(np.floor((np.degrees(v) + cfg.fov_v / 2.0) / grid).astype(np.int64), 0, n_v - 1)
        seen[iu * n_v + iv] = True
    return seen.reshape(n_h, n_v)


def coverage_fraction(cfg: ScanPatternConfig, dt: float, grid: float = 1.0, t0: float = 0.0) -> float:
    """Fraction of ``grid``-degree FoV cells visited during a window of length ``dt``.

    ``dt == 0`` is the single-sample limit.
    """
    if dt < 0:
        raise ConfigError(f"dt must be non-negative, got {dt}", "dt")
    mask = visited_cells(cfg, t0, dt, grid)
    return float(mask.sum()) / mask.size
