import numpy as np
import pytest
from hypothesis import settings

from mavtrack.scan_pattern import ScanPatternConfig
from mavtrack.sensing import calibrate, default_calibration_scene

settings.register_profile("repo", deadline=None, derandomize=True)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def model():
    """Density model calibrated from the default scene, seed 0 (a few seconds)."""
    return calibrate(default_calibration_scene(), ScanPatternConfig(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records and prints the verdict line for acceptance item ``n``."""
    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
