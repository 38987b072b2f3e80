"""Closed-loop runs: simulator -> frame taps -> tracker -> UGV command, plus metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .integrator import FrameTap, Modality
from .kinematics import UgvState, wrap_angle
from .presets import Scenario, initial_state
from .scan_pattern import sample_count
from .scene import GroundTruthLog, StreamSimulator
from .sensing import DensityModel
from .tracker import Tracker, parse_mode
from .validator import ValidationReport, validate

SPACING_HEADER = ["modality", "f", "t", "speed", "spacing", "expected_spacing", "n_points"]


@dataclass
class RunResult:
    scenario: Scenario
    mode: str
    tracker: Tracker
    ground_truth: GroundTruthLog
    validations: list[ValidationReport] = field(default_factory=list)
    frame_stats: list[tuple[str, float, float, int]] = field(default_factory=list)
    t_end: float = 0.0  # simulated time actually covered

    @property
    def record(self):
        return self.tracker.record

    @property
    def track_duration(self) -> float:
        return self.record.t_lost if self.record.lost else self.t_end

    def truth_at(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.scenario.trajectory.duration)
        return self.scenario.trajectory.evaluate(t)

    def revolutions(self) -> float | None:
        traj = self.scenario.trajectory
        return traj.revolutions(self.track_duration) if hasattr(traj, "revolutions") else None

    def position_errors(self, modality: Modality = Modality.FUSED) -> np.ndarray:
        """Per-state error vectors. Fused states are compared at their report time, raw
        estimates at the mean time of their points."""
        t, p, _, _, t_obs = self.record.arrays(modality)
        if len(t) == 0:
            return np.zeros((0, 3))
        when = t if modality == Modality.FUSED else t_obs
        return p - self.truth_at(when)[0]

    def mean_position_error(self, modality: Modality = Modality.FUSED) -> float:
        e = self.position_errors(modality)
        return float(np.linalg.norm(e, axis=1).mean()) if len(e) else math.nan

    def error_std(self, modality: Modality = Modality.FUSED) -> float:
        """Spread of the error vectors about their mean (bias removed), m."""
        e = self.position_errors(modality)
        if len(e) < 2:
            return math.nan
        return float(np.sqrt(((e - e.mean(axis=0)) ** 2).sum(axis=1).mean()))

    def rmse(self, modality: Modality = Modality.FUSED) -> float:
        e = self.position_errors(modality)
        return float(np.sqrt((e ** 2).sum(axis=1).mean())) if len(e) else math.nan

    def miss_rate(self) -> float:
        diags = self.record.diagnostics
        return float(np.mean([not d.accepted for d in diags])) if diags else math.nan

    def azimuths(self) -> tuple[np.ndarray, np.ndarray]:
        """True MAV azimuth (rad) in the sensor frame at each ground-truth sample within the track."""
        g = self.ground_truth.as_array()
        g = g[g[:, 0] <= self.track_duration + 1e-9]
        az = wrap_angle(np.arctan2(g[:, 2] - g[:, 8], g[:, 1] - g[:, 7]) - g[:, 9])
        return g[:, 0], np.atleast_1d(az)

    def spacing_rows(self) -> list[list]:
        """Distances between estimates from back-to-back frames of the same modality."""
        rows = []
        for modality in (Modality.MF, Modality.HF):
            ests = self.record.raw[modality]
            for a, b in zip(ests, ests[1:]):
                if abs((b.t - a.t) - b.integration_time) > 1e-9:
                    continue
                _, v = self.truth_at(0.5 * (a.t_obs + b.t_obs))
                speed = float(np.linalg.norm(v))
                f = 1.0 / b.integration_time
                rows.append([modality.value, f, b.t, speed, float(np.linalg.norm(b.p - a.p)), speed / f,
                             b.n_points])
        rows.sort(key=lambda r: (r[0], r[2]))
        return rows

    def diagnostics(self) -> dict:
        rec = self.record
        out = {
            "scenario": self.scenario.name,
            "mode": self.mode,
            "seed": self.scenario.seed,
            "duration": round(self.scenario.duration, 6),
            "track_duration": round(self.track_duration, 6),
            "lost": rec.lost,
            "t_lost": None if rec.t_lost is None else round(rec.t_lost, 6),
            "revolutions": None if self.revolutions() is None else round(self.revolutions(), 6),
            "n_states": len(rec.states),
            "miss_rate": _r(self.miss_rate()),
            "mean_position_error": _r(self.mean_position_error()),
            "rmse": {m.value: _r(self.rmse(m)) for m in (Modality.FUSED, Modality.HF, Modality.MF)},
            "error_std": {m.value: _r(self.error_std(m)) for m in (Modality.FUSED, Modality.HF, Modality.MF)},
            "max_abs_azimuth_deg": _r(float(np.degrees(np.abs(self.azimuths()[1]).max()))
                                      if len(self.azimuths()[1]) else math.nan),
            "misses": sum(1 for d in rec.diagnostics if not d.accepted),
            "frames": len(rec.diagnostics),
            "rate_history": [[round(t, 6), round(fh, 6), round(fm, 6)] for t, fh, fm in rec.rates[:: max(1, len(rec.rates) // 500)]],
            "ugv_commands": [[round(x, 6) for x in c] for c in rec.commands[:: max(1, len(rec.commands) // 500)]],
            "validations": [v.summary() for v in self.validations],
        }
        return out


def _r(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else round(float(x), 6)


@dataclass
class _Lane:
    tracker: Tracker
    taps: list[FrameTap]
    lf_tap: FrameTap | None
    result: RunResult


def _make_lane(scenario, model, mode, sim, validate_lf) -> _Lane:
    h = scenario.scene.sensor_height
    p0, _ = initial_state(scenario)
    tracker = Tracker(p0, model, scenario.tracker, scenario.scan, mode, 0.0, None, h, scenario.f_LF)
    if tracker.fixed_rate is None:
        taps = [FrameTap(Modality.MF, tracker.rates.f_MF, 0.0, sim.odometry, h),
                FrameTap(Modality.HF, tracker.rates.f_HF, 0.0, sim.odometry, h)]
    else:
        f = tracker.fixed_rate
        taps = [FrameTap(Modality.HF if f > 20.0 else Modality.MF, f, 0.0, sim.odometry, h, clamp=False)]
    lf_tap = FrameTap(Modality.LF, scenario.f_LF, 0.0, sim.odometry, h) if validate_lf else None
    return _Lane(tracker, taps, lf_tap, RunResult(scenario, tracker.mode if tracker.fixed_rate is None
                                                  else mode, tracker, sim.ground_truth))


_ORDER = {Modality.MF: 0, Modality.HF: 1}


def _feed(lane: _Lane, chunk, ugv: UgvState, model: DensityModel) -> np.ndarray | None:
    """Push one chunk through a lane; returns the latest UGV command, if any."""
    tracker, command = lane.tracker, None
    for tp in lane.taps:
        tp.push(chunk)
    while not tracker.lost:
        ready = [(fr, tp) for tp in lane.taps if (fr := tp.pop()) is not None]
        if not ready:
            break
        # MF before HF on equal end times so the HF update can fuse it
        ready.sort(key=lambda x: (x[0].t_end, _ORDER[x[0].modality]))
        for fr, _ in ready:
            lane.result.frame_stats.append((fr.modality.value, fr.t_start, fr.integration_time, len(fr)))
            rates, q_dot = tracker.track_step(fr, ugv)
            if rates is not None and tracker.fixed_rate is None:
                for tp in lane.taps:
                    tp.rate = rates.rate(tp.modality)
            if q_dot is not None:
                command = q_dot
    if lane.lf_tap is not None:
        lane.lf_tap.push(chunk)
        fr = lane.lf_tap.pop()
        if fr is not None:
            lane.result.frame_stats.append((fr.modality.value, fr.t_start, fr.integration_time, len(fr)))
            _validate_frame(lane.result, fr, model)
    lane.result.t_end = chunk.t_end
    return command


def run_modes(scenario: Scenario, model: DensityModel, modes, *, seed: int | None = None,
              stop_on_loss: bool = True, validate_lf: bool = True, chunk_dt: float = 0.01) -> list[RunResult]:
    """Run one or more tracker modes on a single simulated stream.

    With UGV control enabled the stream depends on the tracker, so only one
    mode may run at a time. Otherwise every mode sees the identical stream.
    The UGV command issued after a fused update applies from the next
    simulation chunk. With ``stop_on_loss`` simulation ends once every lane
    has lost its track.
    """
    modes = [parse_mode(m)[0] for m in modes]
    if not modes:
        raise ValueError("no modes given")
    if scenario.ugv_control and len(modes) > 1:
        raise ValueError("closed-loop UGV control needs one simulation per mode")
    seed = scenario.seed if seed is None else int(seed)
    sim = StreamSimulator(scenario.scene, scenario.scan, seed, chunk_dt)
    lanes = [_make_lane(scenario, model, m, sim, validate_lf) for m in modes]
    ugv = UgvState(scenario.ugv0.q, scenario.ugv0.q_dot)
    total = sample_count(scenario.scan.point_rate, scenario.duration)
    while sim.k < total:
        if stop_on_loss and all(lane.tracker.lost for lane in lanes):
            break
        chunk = sim.step(ugv, min(sim.chunk_n, total - sim.k))
        ugv = ugv.advanced(chunk.t_end - chunk.t_start)
        for lane in lanes:
            if stop_on_loss and lane.tracker.lost:
                continue
            q_dot = _feed(lane, chunk, ugv, model)
            if scenario.ugv_control:
                if lane.tracker.lost:
                    ugv = UgvState(ugv.q, np.zeros(3))
                elif q_dot is not None:
                    ugv = UgvState(ugv.q, q_dot)
    return [lane.result for lane in lanes]


def run(scenario: Scenario, model: DensityModel, mode: str | None = None, **kwargs) -> RunResult:
    return run_modes(scenario, model, [mode or scenario.mode], **kwargs)[0]


def _validate_frame(result: RunResult, frame, model: DensityModel) -> None:
    window = result.record.window(frame.t_start, frame.t_end)
    if len(window) < 2:
        return
    result.validations.append(validate(frame, window, model, result.scenario.validator,
                                       result.scenario.scene.mav.half_extents))


def write_spacing_csv(path: str | Path, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPACING_HEADER)
        for m, f, t, speed, sp, ex, n in rows:
            w.writerow([m, f"{f:.6f}", f"{t:.6f}", f"{speed:.6f}", f"{sp:.6f}", f"{ex:.6f}", n])
