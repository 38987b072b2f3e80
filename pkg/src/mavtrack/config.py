"""YAML scenario files.

A file either starts from a named preset::

    seed: 3
    preset: corridor_35m
    preset_args: {speed: 2.0}
    mode: fixed:10

or describes the scene in full under ``scene:``. Sections ``scan``,
``tracker``, ``validator`` and ``calibration`` override individual
defaults. Unknown keys are errors, reported with their dotted path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError
from .integrator import DEFAULT_LF_RATE
from .kinematics import UgvState
from .presets import PRESETS, Scenario
from .scan_pattern import ScanPatternConfig
from .scene import Box, CirclePath, LinePath, MavBody, NoiseConfig, Scene, WaypointPath, hover_path
from .sensing import DEFAULT_DISTANCES, DEFAULT_FREQUENCIES, DEFAULT_REPETITIONS, CountThresholds
from .tracker import TrackerConfig
from .validator import ValidatorConfig

TOP_KEYS = {"seed", "preset", "preset_args", "scene", "scan", "tracker", "validator", "calibration",
            "mode", "duration", "ugv", "ugv_control", "f_LF", "name", "out"}


@dataclass(frozen=True)
class CalibrationConfig:
    distances: tuple[float, ...] = DEFAULT_DISTANCES
    frequencies: tuple[float, ...] = DEFAULT_FREQUENCIES
    repetitions: int = DEFAULT_REPETITIONS


@dataclass
class ScenarioConfig:
    scenario: Scenario
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    out: Path | None = None


def _section(raw: Any, path: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must be a mapping", path)
    return raw


def _check_keys(raw: dict, allowed, path: str) -> None:
    for k in raw:
        if k not in allowed:
            key = f"{path}.{k}" if path else str(k)
            raise ConfigError(f"unknown key '{key}'", key)


def _vec(raw, path: str, n: int = 3) -> np.ndarray:
    try:
        v = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path} must be a list of {n} numbers", path) from None
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise ConfigError(f"{path} must be a list of {n} finite numbers", path)
    return v


def _num(raw, path: str, kind=float):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{path} must be a number", path)
    if kind is int and int(raw) != raw:
        raise ConfigError(f"{path} must be an integer", path)
    return kind(raw)


def _dataclass(cls, raw: Any, path: str, base=None, nested=None):
    """Build ``cls`` from a mapping, overriding ``base`` (or the defaults) field by field."""
    raw = _section(raw, path)
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    _check_keys(raw, types, path)
    kwargs = {}
    for k, v in raw.items():
        if nested and k in nested:
            kwargs[k] = nested[k](v, f"{path}.{k}")
        elif v is None or isinstance(v, (list, str)):
            kwargs[k] = v
        else:
            kwargs[k] = _num(v, f"{path}.{k}", int if str(types[k]) == "int" else float)
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}", path) from None


def _thresholds(raw, path):
    return _dataclass(CountThresholds, raw, path)


def _trajectory(raw, path: str):
    raw = dict(_section(raw, path))
    kind = raw.pop("type", None)
    fields = {
        "line": {"start", "end", "speed_start", "speed_end"},
        "circle": {"center", "radius", "omega_start", "omega_end", "ramp_time", "phase", "duration"},
        "waypoints": {"t", "p", "v"},
        "hover": {"position", "duration"},
    }
    if kind not in fields:
        raise ConfigError(f"{path}.type must be one of {sorted(fields)}", f"{path}.type")
    _check_keys(raw, fields[kind], path)
    try:
        if kind == "line":
            return LinePath(_vec(raw.get("start"), f"{path}.start"), _vec(raw.get("end"), f"{path}.end"),
                            _num(raw.get("speed_start"), f"{path}.speed_start"),
                            None if raw.get("speed_end") is None else _num(raw["speed_end"], f"{path}.speed_end"))
        if kind == "circle":
            opt = {k: _num(raw[k], f"{path}.{k}") for k in ("omega_end", "ramp_time", "phase", "duration") if k in raw}
            return CirclePath(_vec(raw.get("center"), f"{path}.center"), _num(raw.get("radius"), f"{path}.radius"),
                              _num(raw.get("omega_start"), f"{path}.omega_start"), **opt)
        if kind == "waypoints":
            return WaypointPath(raw.get("t"), raw.get("p"), raw.get("v"))
        return hover_path(_vec(raw.get("position"), f"{path}.position"), _num(raw.get("duration"), f"{path}.duration"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}", path) from None


def _box(raw, path: str) -> Box:
    raw = _section(raw, path)
    _check_keys(raw, {"center", "half_extents", "reflectivity"}, path)
    return Box(_vec(raw.get("center"), f"{path}.center"), _vec(raw.get("half_extents"), f"{path}.half_extents"),
               _num(raw.get("reflectivity", 0.6), f"{path}.reflectivity"))


def _scene(raw, path: str, seed: int) -> Scene:
    raw = _section(raw, path)
    _check_keys(raw, {"ground_z", "obstacles", "mav", "noise", "ground_reflectivity", "sensor_height"}, path)
    mav_raw = _section(raw.get("mav"), f"{path}.mav")
    if "trajectory" not in mav_raw:
        raise ConfigError(f"{path}.mav.trajectory is required", f"{path}.mav.trajectory")
    _check_keys(mav_raw, {"trajectory", "half_extents", "reflectivity", "visible_until"}, f"{path}.mav")
    mav_kwargs = {}
    if "half_extents" in mav_raw:
        mav_kwargs["half_extents"] = _vec(mav_raw["half_extents"], f"{path}.mav.half_extents")
    for k in ("reflectivity", "visible_until"):
        if mav_raw.get(k) is not None:
            mav_kwargs[k] = _num(mav_raw[k], f"{path}.mav.{k}")
    mav = MavBody(_trajectory(mav_raw["trajectory"], f"{path}.mav.trajectory"), **mav_kwargs)
    obstacles = raw.get("obstacles") or []
    if not isinstance(obstacles, list):
        raise ConfigError(f"{path}.obstacles must be a list", f"{path}.obstacles")
    noise = _dataclass(NoiseConfig, raw.get("noise"), f"{path}.noise", NoiseConfig(seed=seed))
    kwargs = {}
    for k in ("ground_reflectivity", "sensor_height"):
        if k in raw:
            kwargs[k] = _num(raw[k], f"{path}.{k}")
    ground = raw.get("ground_z", 0.0)
    return Scene(ground_z=None if ground is None else _num(ground, f"{path}.ground_z"),
                 obstacles=[_box(b, f"{path}.obstacles[{i}]") for i, b in enumerate(obstacles)],
                 mav=mav, noise=noise, **kwargs)


def _ugv(raw, path: str) -> UgvState:
    raw = _section(raw, path)
    _check_keys(raw, {"q", "q_dot"}, path)
    return UgvState(_vec(raw.get("q", [0, 0, 0]), f"{path}.q"), _vec(raw.get("q_dot", [0, 0, 0]), f"{path}.q_dot"))


def parse_config(raw: Any, seed: int | None = None) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from parsed YAML. ``seed`` overrides the file's."""
    raw = _section(raw, "config")
    _check_keys(raw, TOP_KEYS, "")
    if seed is None:
        if "seed" not in raw:
            raise ConfigError("seed is required", "seed")
        seed = raw["seed"]
    seed = _num(seed, "seed", int)
    if seed < 0:
        raise ConfigError("seed must be non-negative", "seed")

    if "preset" in raw:
        if "scene" in raw:
            raise ConfigError("give either preset or scene, not both", "scene")
        name = raw["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset '{name}', choose from {sorted(PRESETS)}", "preset")
        args = _section(raw.get("preset_args"), "preset_args")
        try:
            scenario = PRESETS[name](seed=seed, **args)
        except TypeError as exc:
            raise ConfigError(f"preset_args: {exc}", "preset_args") from None
    elif "scene" in raw:
        if "preset_args" in raw:
            raise ConfigError("preset_args needs a preset", "preset_args")
        scene = _scene(raw["scene"], "scene", seed)
        duration = raw.get("duration", scene.mav.trajectory.duration)
        scenario = Scenario(str(raw.get("name", "custom")), scene, duration=_num(duration, "duration"), seed=seed)
    else:
        raise ConfigError("config needs a preset or a scene", "scene")

    updates: dict[str, Any] = {"seed": seed}
    if "name" in raw:
        updates["name"] = str(raw["name"])
    if "duration" in raw:
        updates["duration"] = _num(raw["duration"], "duration")
    if "mode" in raw:
        updates["mode"] = str(raw["mode"])
    if "ugv" in raw:
        updates["ugv0"] = _ugv(raw["ugv"], "ugv")
    if "ugv_control" in raw:
        if not isinstance(raw["ugv_control"], bool):
            raise ConfigError("ugv_control must be true or false", "ugv_control")
        updates["ugv_control"] = raw["ugv_control"]
    if "f_LF" in raw:
        updates["f_LF"] = _num(raw.get("f_LF", DEFAULT_LF_RATE), "f_LF")
        if not 0 < updates["f_LF"] <= 1.0:
            raise ConfigError("f_LF must lie in (0, 1] Hz", "f_LF")
    updates["scan"] = _dataclass(ScanPatternConfig, raw.get("scan"), "scan", scenario.scan)
    updates["tracker"] = _dataclass(TrackerConfig, raw.get("tracker"), "tracker", scenario.tracker,
                                    {"thresholds": _thresholds})
    updates["validator"] = _dataclass(ValidatorConfig, raw.get("validator"), "validator", scenario.validator)
    try:
        scenario = dataclasses.replace(scenario, **updates)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "mode") from None

    cal = _dataclass(CalibrationConfig, raw.get("calibration"), "calibration")
    try:
        cal = CalibrationConfig(tuple(float(x) for x in cal.distances), tuple(float(x) for x in cal.frequencies),
                                _num(cal.repetitions, "calibration.repetitions", int))
    except (TypeError, ValueError):
        raise ConfigError("calibration ladders must be lists of numbers", "calibration") from None
    out = raw.get("out")
    return ScenarioConfig(scenario, cal, None if out is None else Path(out))


def load_config(path: str | Path, seed: int | None = None) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", "config") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}", "config") from None
    return parse_config(raw, seed)
