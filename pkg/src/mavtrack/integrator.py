"""Frame integration of the point stream at three concurrent rates.

Each modality cuts the same stream into contiguous windows
``[t_start, t_start + 1/f)``. The rate in force when a frame is opened
fixes its length, so a rate change made while processing frame ``k``
takes effect from frame ``k + 1``.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, RateClampWarning
from .kinematics import UgvPath, UgvState
from .scene import LidarPoint, PointStream, StreamChunk


class Modality(str, enum.Enum):
    HF = "HF"
    MF = "MF"
    LF = "LF"
    FUSED = "fused"


BANDS = {
    Modality.HF: (20.0, 100.0),
    Modality.MF: (5.0, 20.0),
    Modality.LF: (0.0, 1.0),  # open at zero
}
DEFAULT_LF_RATE = 0.5
FRAME_STATS_HEADER = ["modality", "t_start", "integration_time", "n_points"]


def clamp_rate(modality: Modality, f: float) -> float:
    """Clamp ``f`` into the modality band, warning when it had to move."""
    lo, hi = BANDS[Modality(modality)]
    if not math.isfinite(f):
        raise ConfigError(f"{modality.value} rate must be finite, got {f}", f"f_{modality.value}")
    out = f
    if modality == Modality.LF:
        if f <= 0:
            out = 1e-3
        elif f > hi:
            out = hi
    else:
        out = min(max(f, lo), hi)
    if out != f:
        warnings.warn(f"{modality.value} rate {f:g} Hz clamped to {out:g} Hz", RateClampWarning, stacklevel=3)
    return float(out)


@dataclass(frozen=True)
class RateSet:
    f_HF: float = 100.0
    f_MF: float = 10.0
    f_LF: float = DEFAULT_LF_RATE

    def __post_init__(self):
        for m in (Modality.HF, Modality.MF, Modality.LF):
            f = self.rate(m)
            lo, hi = BANDS[m]
            if not (lo <= f <= hi) or f <= 0:
                raise ConfigError(f"f_{m.value}={f} outside band [{lo}, {hi}]", f"f_{m.value}")
        if not self.f_HF > self.f_MF > self.f_LF:
            # 20 Hz is shared by both bands; equality is allowed only there
            if not (self.f_HF == self.f_MF == 20.0 and self.f_MF > self.f_LF):
                raise ConfigError("rates must satisfy f_HF > f_MF > f_LF", "rates")

    def rate(self, modality: Modality) -> float:
        return {Modality.HF: self.f_HF, Modality.MF: self.f_MF, Modality.LF: self.f_LF}[Modality(modality)]

    @classmethod
    def clamped(cls, f_HF: float, f_MF: float, f_LF: float = DEFAULT_LF_RATE) -> "RateSet":
        return cls(clamp_rate(Modality.HF, f_HF), clamp_rate(Modality.MF, f_MF), clamp_rate(Modality.LF, f_LF))


@dataclass
class Frame:
    xyz: np.ndarray  # (N, 3) sensor frame
    t: np.ndarray  # (N,)
    labels: np.ndarray  # simulator ground truth, diagnostics only
    t_start: float
    integration_time: float
    modality: Modality
    ugv: UgvState  # pose at t_start
    sensor_height: float = 0.45
    odometry: UgvPath | None = None

    def __post_init__(self):
        if not self.integration_time > 0:
            raise ConfigError("integration_time must be positive", "integration_time")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def t_end(self) -> float:
        return self.t_start + self.integration_time

    @property
    def frequency(self) -> float:
        return 1.0 / self.integration_time

    @property
    def points(self) -> list[LidarPoint]:
        r = np.linalg.norm(self.xyz, axis=1)
        return [LidarPoint(self.xyz[i], float(self.t[i]), float(r[i]), int(self.labels[i])) for i in range(len(self))]

    def subset(self, mask) -> "Frame":
        return Frame(self.xyz[mask], self.t[mask], self.labels[mask], self.t_start, self.integration_time,
                     self.modality, self.ugv, self.sensor_height, self.odometry)


class FrameTap:
    """Incremental frame cutter for one modality.

    ``push`` feeds stream chunks, ``pop`` returns the next complete frame or
    None. The length of a frame is decided at the moment it is first needed,
    from the current ``rate``, so updating ``rate`` between pops affects the
    next frame only. Boundaries are computed as ``anchor + n / f`` from the
    last rate change to avoid accumulating rounding error.
    """

    def __init__(self, modality: Modality, rate: float, t0: float = 0.0,
                 odometry: UgvPath | None = None, sensor_height: float = 0.45, clamp: bool = True):
        self.modality = Modality(modality)
        self.clamp = clamp
        self.rate = rate
        self.odometry = odometry
        self.sensor_height = sensor_height
        self._anchor = t0
        self._anchor_rate: float | None = None
        self._n = 0
        self._start = t0
        self._end: float | None = None
        self._frame_rate: float | None = None
        self._pending: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._covered = t0

    @property
    def rate(self) -> float:
        return self._rate

    @rate.setter
    def rate(self, f: float) -> None:
        f = float(f)
        if not (f > 0 and math.isfinite(f)):
            raise ConfigError(f"rate must be positive and finite, got {f}", "rate")
        # unclamped taps serve fixed-rate baselines outside the adaptive bands
        self._rate = clamp_rate(self.modality, f) if self.clamp else f

    @property
    def t_start(self) -> float:
        return self._start

    def push(self, chunk: StreamChunk) -> None:
        if len(chunk):
            self._pending.append((chunk.xyz, chunk.t, chunk.labels))
        self._covered = max(self._covered, chunk.t_end)

    def _open(self) -> None:
        f = self._rate
        if f != self._anchor_rate:
            self._anchor, self._anchor_rate, self._n = self._start, f, 0
        self._frame_rate = f
        self._end = self._anchor + (self._n + 1) / f

    def pop(self, force: bool = False) -> Frame | None:
        if self._end is None:
            self._open()
        if self._end > self._covered and not force:
            return None
        if self._pending:
            if len(self._pending) == 1:
                xyz, t, lab = self._pending[0]
            else:
                xyz = np.concatenate([p[0] for p in self._pending])
                t = np.concatenate([p[1] for p in self._pending])
                lab = np.concatenate([p[2] for p in self._pending])
            cut = int(np.searchsorted(t, self._end, side="left"))
            self._pending = [(xyz[cut:], t[cut:], lab[cut:])] if cut < len(t) else []
            xyz, t, lab = xyz[:cut], t[:cut], lab[:cut]
        else:
            xyz, t, lab = np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int16)
        ugv = self.odometry.state_at(self._start) if self.odometry is not None and len(self.odometry) else UgvState()
        # end - start is exact here (Sterbenz), so t_start + integration_time == end
        frame = Frame(xyz, t, lab, self._start, self._end - self._start, self.modality, ugv,
                      self.sensor_height, self.odometry)
        self._start = self._end
        self._n += 1
        self._end = None
        return frame


RateSchedule = float | Callable[[float], float] | Sequence[tuple[float, float]]


def _schedule_fn(schedule: RateSchedule) -> Callable[[float], float]:
    if callable(schedule):
        return schedule
    if np.isscalar(schedule):
        return lambda t, f=float(schedule): f
    steps = sorted((float(a), float(b)) for a, b in schedule)
    if not steps:
        raise ConfigError("empty rate schedule", "rate_schedule")
    times = np.array([s[0] for s in steps])
    rates = [s[1] for s in steps]

    def fn(t: float) -> float:
        i = int(np.searchsorted(times, t, side="right")) - 1
        return rates[max(i, 0)]
    return fn


def tap(stream: PointStream, modality: Modality, rate_schedule: RateSchedule,
        chunk_dt: float = 0.01) -> list[Frame]:
    """Cut a recorded stream into frames for one modality.

    ``rate_schedule`` is a constant, a function of time, or ``(t, f)`` steps;
    it is evaluated at each frame start. The last frame may extend past the
    end of the stream.
    """
    fn = _schedule_fn(rate_schedule)
    ft = FrameTap(modality, fn(0.0), 0.0, stream.odometry, stream.sensor_height)
    frames = []

    def drain(force=False):
        while ft.t_start < stream.duration - 1e-12:
            ft.rate = fn(ft.t_start)
            fr = ft.pop(force=force)
            if fr is None:
                return
            frames.append(fr)

    for chunk in stream.chunks(chunk_dt):
        ft.push(chunk)
        drain()
    drain(force=True)
    return frames


def frame_stats_rows(frames: Iterable[Frame]) -> list[list]:
    return [[f.modality.value, f"{f.t_start:.6f}", f"{f.integration_time:.6f}", len(f)] for f in frames]


def write_frame_stats(path: str | Path, frames: Iterable[Frame]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_STATS_HEADER)
        w.writerows(frame_stats_rows(frames))
