"""Seeded scenes shared by the validator and acceptance tests."""

from functools import lru_cache

import numpy as np

from mavtrack.integrator import Modality, tap
from mavtrack.kinematics import UgvState
from mavtrack.scan_pattern import ScanPatternConfig
from mavtrack.scene import Box, LinePath, MavBody, NoiseConfig, Scene, simulate_stream
from mavtrack.tracker import MavState

LF_WINDOW = (2.0, 4.0)  # second 0.5 Hz frame
SWAP_TIME = 1.0


def pass_line() -> LinePath:
    """Crossing pass 5 m ahead at 1 m/s."""
    return LinePath([5.0, -1.5, 1.2], [5.0, 4.0, 1.2], speed_start=1.0)


def blob(seed: int) -> tuple[list[Box], np.ndarray]:
    """Six small boxes scattered around a point next to the path."""
    rng = np.random.default_rng(seed)
    c = pass_line().evaluate(SWAP_TIME)[0] + np.array([0.4, 0.0, 0.0])
    boxes = [Box(c + rng.uniform(-0.25, 0.25, 3), rng.uniform(0.03, 0.08, 3), 0.6) for _ in range(6)]
    return boxes, c


@lru_cache(maxsize=None)
def lf_case(seed: int, kind: str):
    """(LF frame, history) for a genuine pass or a decoy.

    In the decoy the MAV disappears at ``SWAP_TIME`` and the history claims a
    target sitting still on the clutter blob.
    """
    traj = pass_line()
    boxes, c = blob(seed)
    visible = {"genuine": None, "decoy": SWAP_TIME, "vanished": 0.0}[kind]
    scene = Scene(obstacles=boxes if kind != "vanished" else [], mav=MavBody(traj, visible_until=visible),
                  noise=NoiseConfig(seed=seed))
    stream, _ = simulate_stream(scene, UgvState(), ScanPatternConfig(), LF_WINDOW[1], seed)
    frame = tap(stream, Modality.LF, 0.5)[1]
    ts = np.arange(LF_WINDOW[0], LF_WINDOW[1] + 1e-9, 0.05)
    p, v = traj.evaluate(ts)
    if kind == "decoy":
        p, v = np.broadcast_to(c, p.shape), np.zeros_like(v)
    history = [MavState(p[i], v[i], float(ts[i]), 10) for i in range(len(ts))]
    return frame, history
