import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def packed_scene():
    from nbvgrasp.bench import episode_scene

    scene, cam = episode_scene(3)
    return scene, cam


@pytest.fixture(scope="session")
def bridge_scene():
    from nbvgrasp.scene import generate_bridge_scene

    return generate_bridge_scene(4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion(request):
    """Records one pass/fail line per acceptance criterion for the terminal summary."""

    def report(name: str, checks: list[tuple[str, bool]]):
        ok = all(c for _, c in checks)
        detail = "; ".join(f"{d} [{'ok' if c else 'FAIL'}]" for d, c in checks)
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
