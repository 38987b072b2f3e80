import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mavtrack.errors import ConfigError
from mavtrack.scan_pattern import (ScanPatternConfig, azimuth, coverage_fraction, elevation,
                                   sample_directions, visited_cells)

SLOW = ScanPatternConfig(point_rate=240_000)


def test_sample_count_and_fov():
    rays = sample_directions(SLOW, 0.0, 0.01)
    assert len(rays) == 2400
    assert np.all(np.diff(rays.t) > 0)
    assert rays.t[0] >= 0.0 and rays.t[-1] < 0.01
    np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0, atol=1e-9)


def test_first_sample_angles():
    cfg = ScanPatternConfig(phase=0.7)
    first = sample_directions(cfg, 0.0, 0.001)[0]
    assert azimuth(first.direction) == pytest.approx(0.0, abs=1e-12)
    assert elevation(first.direction) == pytest.approx(cfg.half_fov_v_rad * math.sin(0.7), abs=1e-12)


def test_deterministic():
    a = sample_directions(SLOW, 0.3, 0.02)
    b = sample_directions(SLOW, 0.3, 0.02)
    assert a.t.tobytes() == b.t.tobytes()
    assert a.directions.tobytes() == b.directions.tobytes()


@pytest.mark.parametrize("dt", [0.0, -0.1])
def test_bad_dt(dt):
    with pytest.raises(ConfigError):
        sample_directions(SLOW, 0.0, dt)


def test_bad_rate():
    with pytest.raises(ConfigError):
        ScanPatternConfig(point_rate=0)


@pytest.mark.parametrize("grid", [0.0, -1.0, 30.0])
def test_bad_grid(grid):
    with pytest.raises(ConfigError):
        coverage_fraction(SLOW, 0.1, grid)


def test_long_integration_covers_fov():
    assert coverage_fraction(ScanPatternConfig(), 10.0) >= 0.99


def test_single_sample_limit():
    cells = visited_cells(SLOW, 0.0, 0.0)
    assert coverage_fraction(SLOW, 0.0) == pytest.approx(1.0 / cells.size)


def test_coverage_monotone_ladder():
    cfg = ScanPatternConfig()
    ladder = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5]
    cov = [coverage_fraction(cfg, dt) for dt in ladder]
    assert all(a <= b for a, b in zip(cov, cov[1:]))
    assert coverage_fraction(cfg, 0.2) >= coverage_fraction(cfg, 0.01)
    # windows start at the same t0, so a longer window visits a superset of cells
    small, big = visited_cells(cfg, 0.0, 0.01), visited_cells(cfg, 0.0, 0.2)
    assert not np.any(small & ~big)


def test_non_repetition():
    # windows shorter than the ~0.2 s it takes to saturate the 1 deg grid
    cfg = ScanPatternConfig()
    for length in (0.1, 0.15):
        for t0 in (0.0, 0.37, 1.9, 12.345):
            a = visited_cells(cfg, t0, length)
            b = visited_cells(cfg, t0 + length, length)
            assert not np.array_equal(a, b)


@settings(max_examples=60)
@given(fov_h=st.floats(1.0, 170.0), fov_v=st.floats(1.0, 170.0), freq=st.floats(1.0, 2000.0),
       phase=st.floats(0.0, 2 * math.pi), t0=st.floats(0.0, 100.0))
def test_directions_inside_fov(fov_h, fov_v, freq, phase, t0):
    cfg = ScanPatternConfig(fov_h=fov_h, fov_v=fov_v, point_rate=50_000, petal_freq_a=freq, phase=phase)
    rays = sample_directions(cfg, t0, 0.01)
    eps = 1e-9
    assert np.all(np.abs(azimuth(rays.directions)) <= cfg.half_fov_h_rad + eps)
    assert np.all(np.abs(elevation(rays.directions)) <= cfg.half_fov_v_rad + eps)
    np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0, atol=1e-9)
