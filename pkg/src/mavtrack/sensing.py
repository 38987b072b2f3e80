"""Expected on-target point counts and detection spacing.

The density table maps (distance, frame frequency) to the mean and standard
deviation of the number of returns the MAV produces in one frame. It is
calibrated from the simulator with the MAV hovering on the sensor boresight
in free space, smoothed to be monotone, and interpolated bilinearly in
(distance, integration time).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import isotonic_regression

from . import _kernels
from .errors import CalibrationError, ConfigError, ModelStateError
from .scan_pattern import ScanPatternConfig, pattern_angles, angles_to_directions, sample_count
from .scene import Scene, ray_box_distance

MODEL_VERSION = 1
DEFAULT_DISTANCES = (1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 13.0, 17.0, 20.0, 25.0, 30.0)
DEFAULT_FREQUENCIES = (2.0, 5.0, 10.0, 20.0, 50.0, 100.0)
DEFAULT_REPETITIONS = 40

_BLOCK = 4_000_000


@dataclass(frozen=True)
class CountThresholds:
    n_min_HF: int = 4
    n_min_MF: int = 20

    def __post_init__(self):
        if not self.n_min_MF > self.n_min_HF >= 1:
            raise ConfigError("thresholds must satisfy n_min_MF > n_min_HF >= 1", "thresholds")


class DensityModel:
    """Calibrated (distance, frequency) -> (mu, sigma) table.

    ``mu`` and ``sigma`` have shape (n_distances, n_frequencies).
    """

    def __init__(self, distances=None, frequencies=None, mu=None, sigma=None):
        self.distances = None
        self.frequencies = None
        self.mu = None
        self.sigma = None
        if distances is not None:
            self._set(distances, frequencies, mu, sigma)

    def _set(self, distances, frequencies, mu, sigma):
        d = np.asarray(distances, dtype=float)
        f = np.asarray(frequencies, dtype=float)
        mu = np.asarray(mu, dtype=float).reshape(len(d), len(f))
        sigma = np.asarray(sigma, dtype=float).reshape(len(d), len(f))
        if len(d) < 1 or len(f) < 1 or np.any(np.diff(d) <= 0) or np.any(np.diff(f) <= 0) or np.any(f <= 0):
            raise ConfigError("ladders must be non-empty and strictly increasing", "model")
        if np.any(mu < 0) or np.any(sigma < 0):
            raise ConfigError("mu and sigma must be non-negative", "model")
        self.distances, self.frequencies, self.mu, self.sigma = d, f, mu, sigma
        # interpolate over increasing integration time, i.e. decreasing frequency
        periods = 1.0 / f[::-1]
        if len(d) >= 2 and len(f) >= 2:
            self._mu_i = RegularGridInterpolator((d, periods), mu[:, ::-1])
            self._sd_i = RegularGridInterpolator((d, periods), sigma[:, ::-1])
        else:
            self._mu_i = self._sd_i = None

    @property
    def calibrated(self) -> bool:
        return self.mu is not None

    def _require(self):
        if not self.calibrated:
            raise ModelStateError("density model has not been calibrated or loaded")

    def in_hull(self, d, f) -> np.ndarray:
        self._require()
        d = np.asarray(d, dtype=float)
        f = np.asarray(f, dtype=float)
        return ((d >= self.distances[0]) & (d <= self.distances[-1])
                & (f >= self.frequencies[0]) & (f <= self.frequencies[-1]))

    def _query(self, d, f):
        self._require()
        d = np.clip(np.asarray(d, dtype=float), self.distances[0], self.distances[-1])
        with np.errstate(divide="ignore"):
            p = 1.0 / np.asarray(f, dtype=float)
        p = np.clip(p, 1.0 / self.frequencies[-1], 1.0 / self.frequencies[0])
        d, p = np.broadcast_arrays(d, p)
        if self._mu_i is None:
            # degenerate one-row/one-column table
            di = np.abs(self.distances[:, None] - d.reshape(-1)).argmin(axis=0)
            fi = np.abs(1.0 / self.frequencies[:, None] - p.reshape(-1)).argmin(axis=0)
            return self.mu[di, fi].reshape(d.shape), self.sigma[di, fi].reshape(d.shape)
        pts = np.stack([d.reshape(-1), p.reshape(-1)], axis=-1)
        return self._mu_i(pts).reshape(d.shape), self._sd_i(pts).reshape(d.shape)

    def expected_count(self, d, f):
        """(mu, sigma) at distance ``d`` and frequency ``f``; outside the grid the query is clamped
        (see :meth:`in_hull`)."""
        mu, sd = self._query(d, f)
        if mu.ndim == 0:
            return float(mu), float(sd)
        return mu, sd

    def min_frequency_for_count(self, d: float, n: float, band: tuple[float, float]) -> tuple[float, bool]:
        """Largest f in ``band`` with mu(d, f) >= n, and whether density was insufficient.

        mu is piecewise linear and nondecreasing in 1/f, so the crossing is
        solved exactly on the segment where it occurs.
        """
        self._require()
        f_lo, f_hi = float(band[0]), float(band[1])
        if not 0 < f_lo <= f_hi:
            raise ConfigError(f"invalid frequency band {band}", "band")
        p_lo, p_hi = 1.0 / f_hi, 1.0 / f_lo
        mid = [1.0 / x for x in self.frequencies if p_lo < 1.0 / x < p_hi]
        ps = np.array(sorted({p_lo, p_hi, *mid}))
        mus = np.asarray(self._query(d, 1.0 / ps)[0])
        if mus[0] >= n:
            return f_hi, False
        if mus[-1] < n:
            return f_lo, True
        j = int(np.argmax(mus >= n))
        pa, pb, ma, mb = ps[j - 1], ps[j], mus[j - 1], mus[j]
        p = pb if mb == ma else pa + (n - ma) * (pb - pa) / (mb - ma)
        f = min(max(1.0 / p, f_lo), f_hi)
        # absorb rounding so the answer re-queries at or above n
        while self.expected_count(d, f)[0] < n and f > f_lo:
            f = max(f * (1 - 1e-12) - 1e-12, f_lo)
        return f, False

    def to_json(self) -> str:
        self._require()
        doc = {
            "version": MODEL_VERSION,
            "distances": self.distances.tolist(),
            "frequencies": self.frequencies.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DensityModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model file is not valid JSON: {exc}", "model") from exc
        for key in ("version", "distances", "frequencies", "mu", "sigma"):
            if key not in doc:
                raise ConfigError(f"model file lacks '{key}'", key)
        if doc["version"] != MODEL_VERSION:
            raise ConfigError(f"unsupported model version {doc['version']}", "version")
        return cls(doc["distances"], doc["frequencies"], doc["mu"], doc["sigma"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DensityModel":
        return cls.from_json(Path(path).read_text())

    def table_rows(self) -> list[tuple[float, float, float, float]]:
        self._require()
        return [(float(d), float(f), float(self.mu[i, j]), float(self.sigma[i, j]))
                for i, d in enumerate(self.distances) for j, f in enumerate(self.frequencies)]


def expected_count(model: DensityModel, d, f):
    return model.expected_count(d, f)


def min_frequency_for_count(model: DensityModel, d: float, n: float, band) -> tuple[float, bool]:
    return model.min_frequency_for_count(d, n, band)


def expected_spacing(speed, f):
    """Distance flown between consecutive detections at frame rate ``f``."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ConfigError("frequency must be positive", "f")
    out = np.asarray(speed, dtype=float) / f
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SpacingModel:
    density: DensityModel
    n_min: int = 4

    def spacing(self, speed, f):
        return expected_spacing(speed, f)

    def reliable(self, d, f) -> bool:
        return bool(self.density.expected_count(d, f)[0] >= self.n_min)


def smooth_monotone(mu: np.ndarray, frequencies) -> np.ndarray:
    """Isotonic fit: nonincreasing in distance per frequency, then a running max over
    increasing integration time. The running max of nonincreasing columns stays
    nonincreasing, so both orders hold afterwards."""
    out = np.array(mu, dtype=float)
    for j in range(out.shape[1]):
        out[:, j] = isotonic_regression(out[:, j], increasing=False).x
    order = np.argsort(np.asarray(frequencies))[::-1]  # longest integration first
    out[:, order] = np.maximum.accumulate(out[:, order], axis=1)
    return np.maximum(out, 0.0)


def calibration_counts(scene: Scene, cfg: ScanPatternConfig, distances, frequencies,
                       repetitions: int, seed: int) -> list[np.ndarray]:
    """Per-frame MAV return counts; entry ``j`` has shape (n_distances, n_frames_j).

    The MAV hovers on boresight at each distance in otherwise empty space.
    The simulated span holds ``repetitions`` frames of the lowest frequency;
    every frequency tiles that same span with back-to-back frames of length
    ``1/f``, so faster rates get proportionally more frames. Only samples
    whose angles fall in the target's angular footprint are traced.
    """
    mav = scene.mav
    if mav is None:
        raise ConfigError("calibration scene needs a MAV body", "mav")
    d = np.asarray(distances, dtype=float)
    f = np.asarray(frequencies, dtype=float)
    hx, hy, hz = mav.half_extents
    if np.any(d - hx <= 0):
        raise ConfigError("calibration distances must exceed the MAV half-depth", "distances")
    duration = repetitions / f.min()
    total = sample_count(cfg.point_rate, duration)
    near = d - hx
    pad = 1e-6
    az_hi = np.arctan(hy / near) + pad
    el_hi = np.arctan(hz / near) + pad
    h = scene.sensor_height
    centers = np.stack([d, np.zeros_like(d), np.full_like(d, h)], axis=1)
    n_frames = [int(round(duration * fq)) for fq in f]
    counts = [np.zeros((len(d), nf), dtype=np.int64) for nf in n_frames]
    rngs = [np.random.default_rng([seed, b]) for b in range(len(d))]
    noise = scene.noise
    origin = np.array([0.0, 0.0, h])
    for start in range(0, total, _BLOCK):
        n = min(_BLOCK, total - start)
        cap = max(1024, n // 8)
        while True:
            idx = np.empty(cap, dtype=np.int64)
            box = np.empty(cap, dtype=np.int64)
            m = _kernels.pattern_hits_boxes(start, n, float(cfg.point_rate), cfg.half_fov_h_rad,
                                            cfg.half_fov_v_rad, float(cfg.petal_freq_a),
                                            float(cfg.petal_freq_b), cfg.elevation_phase,
                                            -az_hi, az_hi, -el_hi, el_hi, idx, box)
            if m <= cap:
                break
            cap = m
        idx, box = idx[:m], box[:m]
        t = (start + idx) / cfg.point_rate
        dirs = angles_to_directions(*pattern_angles(cfg, t))
        c = centers[box]
        r = ray_box_distance(origin, dirs, c - mav.half_extents, c + mav.half_extents)
        for b in range(len(d)):
            sel = (box == b) & np.isfinite(r)
            tb = t[sel]
            if noise.dropout_alpha > 0 and len(tb):
                p = noise.dropout_prob(np.full(len(tb), mav.reflectivity), r[sel])
                tb = tb[rngs[b].random(len(tb)) >= p]
            for fi, fq in enumerate(f):
                k = np.floor(tb * fq).astype(np.int64)
                k = k[k < n_frames[fi]]
                counts[fi][b] += np.bincount(k, minlength=n_frames[fi])[:n_frames[fi]]
    return counts


def calibrate(scene: Scene, cfg: ScanPatternConfig, distances=DEFAULT_DISTANCES,
              frequencies=DEFAULT_FREQUENCIES, repetitions: int = DEFAULT_REPETITIONS,
              seed: int = 0) -> DensityModel:
    """Build a density model from simulated hover frames (clutter is never part of calibration).

    ``repetitions`` is the number of frames at the lowest frequency.
    """
    distances = sorted(float(x) for x in distances)
    frequencies = sorted(float(x) for x in frequencies)
    if not distances or not frequencies:
        raise ConfigError("distance and frequency ladders must be non-empty", "ladders")
    if repetitions < 10:
        raise ConfigError(f"repetitions must be >= 10, got {repetitions}", "repetitions")
    if len(set(distances)) != len(distances) or len(set(frequencies)) != len(frequencies):
        raise ConfigError("ladders must not contain duplicates", "ladders")
    if sample_count(cfg.point_rate, 1.0 / max(frequencies)) == 0:
        raise CalibrationError("calibration frames are shorter than one sample period")
    counts = calibration_counts(scene, cfg, distances, frequencies, repetitions, seed)
    if any(c.shape[1] < 2 for c in counts):
        raise CalibrationError("a calibration cell received fewer than two frames")
    mu = np.stack([c.mean(axis=1) for c in counts], axis=1)
    sigma = np.stack([c.std(axis=1, ddof=1) for c in counts], axis=1)
    return DensityModel(distances, frequencies, smooth_monotone(mu, frequencies), sigma)


def default_calibration_scene(scene: Scene | None = None) -> Scene:
    """Free-space copy of ``scene`` (MAV body and noise kept, clutter off)."""
    from dataclasses import replace

    from .scene import MavBody, NoiseConfig, hover_path

    if scene is None or scene.mav is None:
        mav = MavBody(hover_path([5.0, 0.0, 0.45], 1.0))
        noise = NoiseConfig() if scene is None else scene.noise
        height = 0.45 if scene is None else scene.sensor_height
    else:
        mav, noise, height = scene.mav, scene.noise, scene.sensor_height
    noise = replace(noise, clutter_rate=0.0)
    return Scene(ground_z=None, obstacles=[], mav=mav, noise=noise, sensor_height=height)

