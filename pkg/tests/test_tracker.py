import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mavtrack import pipeline, presets
from mavtrack.errors import ConfigError, TrackMiss
from mavtrack.integrator import Frame, Modality, RateSet, tap
from mavtrack.kinematics import UgvState
from mavtrack.presets import Scenario
from mavtrack.scan_pattern import ScanPatternConfig
from mavtrack.scene import MavBody, NoiseConfig, Scene, hover_path, simulate_stream
from mavtrack.sensing import CountThresholds
from mavtrack.tracker import (MavState, RadiusIndex, TrackerConfig, TrackRecord, adjust_rates, build_index,
                              centroid, extract_mav, fuse, ground_removal, parse_mode, predict, search_radius,
                              ugv_control)


def _frame(xyz, height=0.45):
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    n = len(xyz)
    return Frame(xyz, np.linspace(0, 0.009, n), np.zeros(n, dtype=np.int16), 0.0, 0.01, Modality.HF,
                 UgvState(), height)


def _brute_ground(frame, alt, ground_z=0.0, margin=0.3):
    z = frame.xyz[:, 2] + frame.sensor_height
    return frame.xyz[z >= min(ground_z + margin, alt - margin)]


def test_ground_only_removed():
    xy = np.random.default_rng(0).uniform(-5, 5, (200, 2))
    f = _frame(np.column_stack([xy, np.full(200, -0.45)]))
    assert len(ground_removal(f, UgvState(), 1.5)) == 0


def test_mav_points_kept():
    f = _frame(np.column_stack([np.full(30, 5.0), np.zeros(30), np.full(30, 1.05)]))
    assert len(ground_removal(f, UgvState(), 1.5)) == 30


@settings(max_examples=200)
@given(alt=st.floats(-1.0, 5.0), margin=st.floats(0.01, 1.0), seed=st.integers(0, 10_000))
def test_ground_removal_oracle(alt, margin, seed):
    pts = np.random.default_rng(seed).uniform([-5, -5, -1], [5, 5, 4], (300, 3))
    f = _frame(pts)
    out = ground_removal(f, UgvState(), alt, 0.0, margin)
    assert np.array_equal(out.xyz, _brute_ground(f, alt, 0.0, margin))
    world_z = pts[:, 2] + 0.45
    # nothing above the last altitude is ever removed
    assert np.sum(world_z > alt) <= np.sum(out.xyz[:, 2] + 0.45 > alt)


def test_empty_index():
    assert len(build_index(np.zeros((0, 3))).query([0, 0, 0], 5.0)) == 0


def test_radius_zero_exact_match():
    pts = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0 + 1e-12], [0.0, 0.0, 0.0]])
    assert RadiusIndex(pts).query([1.0, 2.0, 3.0], 0.0).tolist() == [0]


def test_random_queries_match_brute_force(rng):
    pts = rng.uniform(-3, 3, (1000, 3))
    idx = build_index(pts)
    for _ in range(100):
        c, r = rng.uniform(-3, 3, 3), rng.uniform(0, 2)
        brute = np.flatnonzero(((pts - c) ** 2).sum(axis=1) <= r * r)
        assert np.array_equal(idx.query(c, r), brute)


def test_predict_examples():
    np.testing.assert_allclose(predict([1, 2, 3], [0, 0, 0], 10.0), [1, 2, 3])
    np.testing.assert_allclose(predict([0, 0, 1], [1, 0, 0], 10.0), [0.1, 0, 1])
    np.testing.assert_allclose(predict([2, -1, 1.5], [0, 2, 0], 5.0), [2, -0.6, 1.5])
    with pytest.raises(ConfigError):
        predict([0, 0, 0], [1, 0, 0], 0.0)


@settings(max_examples=100)
@given(p=st.lists(st.floats(-50, 50), min_size=3, max_size=3), v=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       f=st.floats(1.0, 100.0))
def test_prediction_exact_for_constant_velocity(p, v, f):
    p, v = np.array(p), np.array(v)
    truth = p + v * (1.0 / f)
    assert np.max(np.abs(predict(p, v, f) - truth)) <= 1e-9


def test_search_radius_law():
    cfg = TrackerConfig()
    assert search_radius(cfg, 0.0, 10.0) == pytest.approx(0.5)
    assert search_radius(cfg, 2.0, 10.0) == pytest.approx(0.7)


def test_extract_excludes_outside_radius():
    mav = np.array([[5.0, 0.0, 1.0], [5.05, 0.02, 1.01], [4.95, -0.03, 0.99]])
    clutter = np.array([[5.0 + 0.5 + 1e-6, 0.0, 1.0], [5.0, 0.5 + 1e-6, 1.0]])
    idx = build_index(np.vstack([mav, clutter]))
    got = extract_mav(idx, [5.0, 0.0, 1.0], 0.5)
    assert len(got) == 3
    assert len(extract_mav(idx, [0.0, 0.0, 0.0], 0.5)) == 0
    with pytest.raises(ConfigError):
        extract_mav(idx, [0, 0, 0], 0.0)


def test_extract_hover_count_in_band(model):
    # same geometry as calibration: free space, MAV on the boresight
    scene = Scene(ground_z=None, mav=MavBody(hover_path([5.0, 0.0, 0.45], 1.0)), noise=NoiseConfig(seed=4))
    stream, _ = simulate_stream(scene, UgvState(), ScanPatternConfig(), 1.0, seed=4)
    mu, sd = model.expected_count(5.0, 10.0)
    for fr in tap(stream, Modality.MF, 10.0):
        world = fr.xyz + [0, 0, fr.sensor_height]
        n = len(extract_mav(build_index(world), [5.0, 0.0, 0.45], 0.5))
        assert abs(n - mu) <= 3 * sd


def test_centroid_examples(rng):
    np.testing.assert_allclose(centroid([[1, 0, 0], [-1, 0, 0]]), [0, 0, 0])
    np.testing.assert_allclose(centroid([[1.5, 2, 3]]), [1.5, 2, 3])
    pts = rng.normal(size=(500, 3)) * 10
    ref = np.array([math.fsum(pts[:, k]) / 500 for k in range(3)])
    assert np.max(np.abs(centroid(pts) - ref)) <= 1e-12
    with pytest.raises(ValueError):
        centroid(np.zeros((0, 3)))


def _state(p, n, modality, t=1.0):
    return MavState(np.asarray(p, dtype=float), np.zeros(3), t, n, modality)


def test_fuse_examples():
    hf = _state([0.12, 0, 1], 4, Modality.HF)
    out = fuse(None, hf)
    np.testing.assert_allclose(out.p, hf.p)
    assert out.modality == Modality.FUSED
    out = fuse(_state([0, 0, 1], 20, Modality.MF, 0.9), hf)
    assert out.p[0] == pytest.approx(0.02)
    assert out.t == 1.0
    with pytest.raises(TrackMiss):
        fuse(None, None)


@settings(max_examples=200)
@given(a=st.lists(st.floats(-20, 20), min_size=3, max_size=3), b=st.lists(st.floats(-20, 20), min_size=3, max_size=3),
       na=st.integers(1, 500), nb=st.integers(1, 500))
def test_fusion_is_convex(a, b, na, nb):
    a, b = np.array(a), np.array(b)
    p = fuse(_state(a, na, Modality.MF), _state(b, nb, Modality.HF)).p
    ab = b - a
    L2 = float(ab @ ab)
    if L2 < 1e-18:
        np.testing.assert_allclose(p, a, atol=1e-9)
        return
    s = float((p - a) @ ab) / L2
    assert -1e-9 <= s <= 1 + 1e-9
    assert np.linalg.norm(a + s * ab - p) <= 1e-9 * (1 + np.linalg.norm(a) + np.linalg.norm(b))


def test_adjust_rates_near_and_slow(model):
    st_ = MavState([2.0, 0.0, 0.45], [0.1, 0, 0], 0.0, 100)
    dec = adjust_rates(st_, UgvState(), model, CountThresholds())
    assert dec.rates.f_HF == pytest.approx(100.0)
    assert model.expected_count(2.0, 100.0)[0] >= 4


def test_adjust_rates_zero_speed_density_only(model):
    st_ = MavState([8.0, 0.0, 0.45], [0, 0, 0], 0.0, 100)
    dec = adjust_rates(st_, UgvState(), model, CountThresholds())
    f_den, _ = model.min_frequency_for_count(8.0, 4, (20.0, 100.0))
    assert dec.f_blur == 0.0
    assert dec.rates.f_HF == pytest.approx(f_den)


def test_adjust_rates_monotone_in_distance(model):
    near = adjust_rates(MavState([5.0, 0, 0.45], [0, 0, 0], 0.0, 50), UgvState(), model, CountThresholds())
    far = adjust_rates(MavState([17.0, 0, 0.45], [0, 0, 0], 0.0, 50), UgvState(), model, CountThresholds())
    assert far.rates.f_MF <= near.rates.f_MF


@settings(max_examples=100)
@given(d=st.floats(1.5, 35.0), speed=st.floats(0.0, 10.0), az=st.floats(-math.pi, math.pi))
def test_adjust_rates_always_valid(model, d, speed, az):
    p = [d * math.cos(az), d * math.sin(az), 1.0]
    dec = adjust_rates(MavState(p, [speed, 0, 0], 0.0, 10), UgvState(), model, CountThresholds())
    r = dec.rates
    assert isinstance(r, RateSet)
    assert 20.0 <= r.f_HF <= 100.0 and 5.0 <= r.f_MF <= 20.0
    # the blur floor wins over density, up to the device ceiling
    assert r.f_HF >= min(dec.f_blur, 100.0) - 1e-9


def test_ugv_control_centered():
    q = ugv_control(MavState([5.0, 0.0, 0.45], [0, 0, 0], 0.0, 10), UgvState(), ScanPatternConfig(), 5.0)
    np.testing.assert_allclose(q, 0.0, atol=1e-12)


def test_ugv_control_proportional_yaw():
    cfg = TrackerConfig(k_yaw=1.0, yaw_rate_max=1.0)
    az = math.radians(20)
    p = [5 * math.cos(az), 5 * math.sin(az), 0.45]
    q = ugv_control(MavState(p, [0, 0, 0], 0.0, 10), UgvState(), ScanPatternConfig(), 5.0, cfg)
    assert q[2] == pytest.approx(az)
    q = ugv_control(MavState(p, [0, 0, 0], 0.0, 10), UgvState(), ScanPatternConfig(), 5.0,
                    TrackerConfig(k_yaw=5.0, yaw_rate_max=1.0))
    assert q[2] == pytest.approx(1.0)


@settings(max_examples=200)
@given(x=st.floats(-20, 20), y=st.floats(-20, 20), z=st.floats(-3, 8), yaw=st.floats(-3.1, 3.1))
def test_ugv_control_saturated(x, y, z, yaw):
    cfg = TrackerConfig()
    q = ugv_control(MavState([x, y, z], [0, 0, 0], 0.0, 10), UgvState([0.3, -0.2, yaw]), ScanPatternConfig(), 5.0, cfg)
    assert abs(q[2]) <= cfg.yaw_rate_max + 1e-12
    assert math.hypot(q[0], q[1]) <= cfg.drive_speed_max + 1e-12


def test_record_rejects_out_of_order():
    rec = TrackRecord()
    rec.append(_state([0, 0, 0], 5, Modality.FUSED, 1.0))
    with pytest.raises(ValueError):
        rec.append(_state([0, 0, 0], 5, Modality.FUSED, 1.0))


def test_parse_mode():
    assert parse_mode("adaptive") == ("adaptive", None)
    assert parse_mode("fixed:10") == ("fixed:10", 10.0)
    for bad in ("fixed:0", "fixed:abc", "fast", "fixed:250"):
        with pytest.raises(ConfigError):
            parse_mode(bad)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrackerConfig(search_radius_base=0.0)
    with pytest.raises(ConfigError):
        TrackerConfig(size_gate=-1.0)
    with pytest.raises(ConfigError):
        TrackerConfig(velocity_beta=1.0)


# -- end-to-end fixtures ----------------------------------------------------

@pytest.fixture(scope="module")
def hover_run(model):
    return pipeline.run(presets.hover(duration=6.0, seed=0), model, "adaptive", validate_lf=False)


@pytest.mark.parametrize("mode", ["adaptive", "fixed:10"])
def test_first_step_succeeds(model, mode):
    scene = Scene(ground_z=None, mav=MavBody(hover_path([5.0, 0.0, 0.45], 1.0)), noise=NoiseConfig(seed=0))
    r = pipeline.run(Scenario("free", scene, duration=1.0, ugv_control=False), model, mode, validate_lf=False)
    first_mf = next(d for d in r.record.diagnostics if d.modality == Modality.MF)
    assert first_mf.t_start == 0.0 and first_mf.accepted
    assert not r.record.lost
    assert r.mean_position_error() < 0.15


def test_hover_speed_noise_floor(hover_run):
    speeds = np.array([s.speed for s in hover_run.record.states])
    assert len(speeds) > 100
    assert speeds[100:].max() <= 0.05


def test_state_invariants(hover_run):
    rec = hover_run.record
    t = [s.t for s in rec.states]
    assert all(a < b for a, b in zip(t, t[1:]))
    assert all(s.n_points >= 1 and s.speed <= TrackerConfig().v_max for s in rec.states)
    hf_ends = {round(d.t_start + d.integration_time, 9) for d in rec.diagnostics if d.modality == Modality.HF}
    assert len(rec.states) <= len(hf_ends)


def test_determinism(model):
    a = pipeline.run(presets.hover(duration=2.0, seed=3), model, "adaptive", validate_lf=False)
    b = pipeline.run(presets.hover(duration=2.0, seed=3), model, "adaptive", validate_lf=False)
    assert a.record.csv_rows() == b.record.csv_rows()


@pytest.mark.parametrize("mode", ["adaptive", "fixed:5", "fixed:20"])
def test_lost_after_disappearance(model, mode):
    scene = Scene(mav=MavBody(hover_path([5.0, 0.0, 1.0], 5.0), visible_until=2.0), noise=NoiseConfig(seed=0))
    sc = Scenario("vanish", scene, duration=5.0, ugv_control=False)
    r = pipeline.run(sc, model, mode, validate_lf=False)
    assert r.record.lost
    assert 2.0 <= r.record.t_lost <= 2.0 + sc.tracker.lost_timeout + 1.0 / 5.0


def test_track_csv(tmp_path, hover_run):
    hover_run.record.write_csv(tmp_path / "track.csv")
    lines = (tmp_path / "track.csv").read_text().splitlines()
    assert lines[0] == "t,modality,px,py,pz,vx,vy,vz,n_points,f_HF,f_MF,lost"
    assert all(len(line.split(",")) == 12 for line in lines)
