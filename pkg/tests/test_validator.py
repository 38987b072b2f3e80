import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _fixtures import lf_case
from mavtrack.errors import ConfigError
from mavtrack.hermite import HermiteTrajectory
from mavtrack.integrator import Frame
from mavtrack.kinematics import UgvPath, UgvState
from mavtrack.tracker import MavState
from mavtrack.validator import ValidatorConfig, VoxelCloud, expected_cloud, fit_spline, iou, validate

HALF = np.array([0.09, 0.09, 0.025])


def _static(q=(0.0, 0.0, 0.0)):
    q = np.asarray(q, dtype=float)
    return lambda t: np.broadcast_to(q, (*np.shape(t), 3))


def _box_keys(center, half, vs, origin):
    """Reference voxelization by scanning every candidate voxel."""
    out = set()
    lo = np.floor((center - half - origin) / vs).astype(int)
    hi = np.floor((center + half - origin) / vs).astype(int)
    for i in range(lo[0], hi[0] + 1):
        for j in range(lo[1], hi[1] + 1):
            for k in range(lo[2], hi[2] + 1):
                out.add((i, j, k))
    return out


def test_two_knot_linear():
    tr = fit_spline([MavState([0, 0, 1], [1, 0, 0], 0.0, 5), MavState([2, 0, 1], [1, 0, 0], 2.0, 5)])
    np.testing.assert_allclose(tr.evaluate(1.0), [1, 0, 1], atol=1e-12)
    ts = np.linspace(0, 2, 17)
    np.testing.assert_allclose(tr.evaluate(ts), np.column_stack([ts, 0 * ts, 1 + 0 * ts]), atol=1e-12)


def test_fit_spline_errors():
    with pytest.raises(ValueError):
        fit_spline([MavState([0, 0, 0], [0, 0, 0], 0.0, 1)])
    with pytest.raises(ValueError):
        fit_spline([MavState([0, 0, 0], [0, 0, 0], 1.0, 1), MavState([1, 0, 0], [0, 0, 0], 1.0, 1)])


@settings(max_examples=100)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 30))
def test_spline_knots_and_derivative(seed, n):
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.uniform(0.05, 0.5, n))
    p = rng.uniform(-10, 10, (n, 3))
    v = rng.uniform(-5, 5, (n, 3))
    tr = fit_spline([MavState(p[i], v[i], float(t[i]), 1) for i in range(n)])
    assert np.max(np.abs(tr.evaluate(t) - p)) <= 1e-9
    assert np.max(np.abs(tr.derivative(t) - v)) <= 1e-9
    h = 1e-7
    for _ in range(5):
        i = rng.integers(0, n - 1)
        u = t[i] + rng.uniform(0.1, 0.9) * (t[i + 1] - t[i])
        up, um = u + h, u - h
        fd = (tr.evaluate(up) - tr.evaluate(um)) / (up - um)
        assert np.max(np.abs(fd - tr.derivative(u))) <= 1e-6


def test_hermite_rejects_outside():
    tr = HermiteTrajectory([0, 1], [[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [0, 0, 0]])
    with pytest.raises(ValueError):
        tr.evaluate(1.5)


def _cloud(keys, vs=0.1):
    return VoxelCloud(vs, np.array(sorted(keys), dtype=np.int64).reshape(-1, 3))


def test_iou_examples():
    a = _cloud({(i, 0, 0) for i in range(50)})
    b = _cloud({(i, 0, 0) for i in range(100)})
    assert iou(a, a) == 1.0
    assert iou(a, _cloud({(i, 5, 0) for i in range(50)})) == 0.0
    assert iou(a, b) == pytest.approx(0.5)
    assert iou(_cloud(set()), _cloud(set())) == 1.0
    with pytest.raises(ValueError):
        iou(a, _cloud({(0, 0, 0)}, vs=0.2))


keysets = st.sets(st.tuples(st.integers(-4, 4), st.integers(-4, 4), st.integers(-2, 2)), max_size=60)


@settings(max_examples=200)
@given(a=keysets, b=keysets)
def test_iou_properties(a, b):
    ca, cb = _cloud(a), _cloud(b)
    assert iou(ca, cb) == iou(cb, ca)
    union = a | b
    ref = 1.0 if not union else len(a & b) / len(union)
    assert iou(ca, cb) == pytest.approx(ref, abs=1e-15)
    if a:
        assert iou(ca, ca) == 1.0
    # growing the intersection inside a fixed union never lowers the score
    for x in sorted(a - b)[:3]:
        grown = _cloud(b | {x})
        assert iou(ca, grown) >= iou(ca, cb)


def test_voxel_cloud_is_a_set():
    c = VoxelCloud.from_points([[0.01, 0.01, 0.01], [0.02, 0.03, 0.04], [0.15, 0, 0]], 0.1)
    assert len(c) == 2
    with pytest.raises(ConfigError):
        VoxelCloud(0.0)


def test_expected_hover_is_static_box(model):
    p = np.array([5.0, 0.3, 1.0])
    tr = HermiteTrajectory([0.0, 2.0], [p, p], np.zeros((2, 3)))
    origin = np.array([4.93, 0.2, 0.97])  # no box face on a voxel boundary
    cloud = expected_cloud(tr, model, 0.5, _static(), HALF, 0.1, origin=origin)
    assert {tuple(k) for k in cloud.keys.tolist()} == _box_keys(p, HALF, 0.1, origin)


def test_expected_straight_pass_volume(model):
    vs = 0.0075
    tr = HermiteTrajectory([0.0, 2.0], [[4.0, -1.0, 0.45], [4.0, 1.0, 0.45]], [[0, 1.0, 0], [0, 1.0, 0]])
    cloud = expected_cloud(tr, model, 0.5, _static(), HALF, vs)
    tube = (2.0 + 2 * HALF[1]) * (2 * HALF[0]) * (2 * HALF[2])
    assert len(cloud) == pytest.approx(tube / vs ** 3, rel=0.3)


def test_expected_beyond_hull_is_empty(model):
    tr = HermiteTrajectory([0.0, 8.0], [[26.0, 0, 0.45], [34.0, 0, 0.45]], [[1.0, 0, 0], [1.0, 0, 0]])
    cloud = expected_cloud(tr, model, 0.5, _static(), HALF, 0.1)
    assert len(cloud) > 0
    x = cloud.centers()[:, 0]
    assert x.max() <= 30.0 + HALF[0] + 0.1


def test_expected_window_mismatch(model):
    tr = HermiteTrajectory([0.0, 2.0], [[5, 0, 1], [5, 0, 1]], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        expected_cloud(tr, model, 0.5, _static(), HALF, 0.1, t0=-1.0, t1=2.0)


def test_expected_deterministic(model):
    tr = HermiteTrajectory([0.0, 1.0, 2.0], [[5, 0, 1], [5.5, 0.4, 1.1], [6, 0, 1]],
                           [[0.5, 0.5, 0], [0.5, 0, 0.1], [0.5, -0.5, 0]])
    a = expected_cloud(tr, model, 0.5, _static(), HALF, 0.15)
    b = expected_cloud(tr, model, 0.5, _static(), HALF, 0.15)
    assert np.array_equal(a.keys, b.keys)


@pytest.mark.parametrize("seed", [0, 1])
def test_genuine_accepted(model, seed):
    frame, hist = lf_case(seed, "genuine")
    rep = validate(frame, hist, model)
    assert rep.accepted and rep.iou > 0.5
    assert rep.accepted == (rep.iou > rep.threshold)
    # the spline traces the observed MAV voxels
    assert rep.mean_spline_distance < 2 * ValidatorConfig().voxel_size


@pytest.mark.parametrize("seed", [0, 1])
def test_decoy_rejected(model, seed):
    frame, hist = lf_case(seed, "decoy")
    rep = validate(frame, hist, model)
    assert not rep.accepted and rep.iou < 0.5


def test_no_corridor_points(model):
    frame, hist = lf_case(0, "vanished")
    rep = validate(frame, hist, model)
    assert rep.n_observed_voxels == 0 and rep.n_expected_voxels > 0
    assert rep.iou == 0.0 and not rep.accepted


def test_empty_history_window(model):
    frame, hist = lf_case(0, "genuine")
    with pytest.raises(ValueError):
        validate(frame, [s for s in hist if s.t > 10.0], model)


@pytest.mark.parametrize("shift", [(16.0, -8.0), (-3.25, 40.5)])
def test_translation_invariance(model, shift):
    frame, hist = lf_case(0, "genuine")
    base = validate(frame, hist, model)
    d = np.array([shift[0], shift[1], 0.0])
    ugv = UgvState([shift[0], shift[1], 0.0])
    moved = Frame(frame.xyz, frame.t, frame.labels, frame.t_start, frame.integration_time, frame.modality,
                  ugv, frame.sensor_height, UgvPath.constant(ugv))
    hist2 = [MavState(s.p + d, s.v, s.t, s.n_points) for s in hist]
    rep = validate(moved, hist2, model)
    assert rep.n_corridor_points == base.n_corridor_points
    assert rep.iou == pytest.approx(base.iou, abs=0.02)
    assert rep.accepted == base.accepted


def test_report_summary_is_json_ready(model):
    import json
    frame, hist = lf_case(0, "genuine")
    s = validate(frame, hist, model).summary()
    json.dumps(s, allow_nan=False)
    assert set(s) >= {"iou", "threshold", "accepted", "n_expected_voxels", "n_observed_voxels"}
    assert not math.isnan(s["iou"])


def test_voxel_csv(tmp_path):
    VoxelCloud(0.1, [[0, 0, 0], [1, 2, 3]]).write_csv(tmp_path / "v.csv")
    assert (tmp_path / "v.csv").read_text().splitlines() == ["x,y,z", "0.050000,0.050000,0.050000",
                                                              "0.150000,0.250000,0.350000"]
