import json
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

ORACLES = Path(__file__).parent / "oracles" / "oracles.json"


@pytest.fixture(scope="session")
def oracles():
    return json.loads(ORACLES.read_text())


@pytest.fixture
def intro_plant():
    from podec import PlantSpec

    return PlantSpec(np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(2), np.eye(2), np.eye(2))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS.values():
        terminalreporter.write_line(line)
