import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def golden():
    return json.loads((DATA / "golden.json").read_text())


# parameter sets shared across modules
BAJD_MONTHLY = dict(kth=0.04, kappa=1.0, sigma=0.2, l=3.0, nu=0.01)
INTEGRATED = dict(kth=0.00150602 * 0.4648, kappa=0.4648, sigma=0.01, l=1.0, nu=0.0002)
INTEGRATED_Y0 = (INTEGRATED["kth"] + 0.0002) / 0.4648
HESTON = dict(kappa_v=1.0, kth_v=0.04, sigma=0.2, kth_x=0.03, rho=-0.8)


_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number: int, ok: bool, detail: str):
        _VERDICTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
