import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from cplcalib import datagen

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CVGL = datagen.PRESETS["cvgl"]


@st.composite
def cvgl_params(draw, guard=0.1):
    """A 10-vector inside the CVGL bounds with |d| >= guard and nonzero b."""
    vals = []
    for k in datagen.CAMERA_PARAM_NAMES:
        lo, hi = CVGL.bounds[k]
        if k == "fy":
            vals.append(vals[0])
            continue
        x = draw(st.floats(lo, hi, allow_nan=False))
        if k == "d":
            x = draw(st.floats(guard, 16.0)) * (1 if draw(st.booleans()) else -1)
        if k == "b" and abs(x) < 1e-3:
            x = -1.0
        vals.append(math.radians(x) if k == "theta_p" else x)
    return np.array(vals)


@pytest.fixture(scope="session")
def cvgl_records():
    return datagen.generate_records(CVGL, 20, 8, 0.0, seed=3)


# -- acceptance reporting ------------------------------------------------------

_ACCEPTANCE: dict[str, dict] = {}


class _Criterion:
    def __init__(self, nodeid, title):
        self.entry = _ACCEPTANCE.setdefault(nodeid, {"title": title, "detail": "", "outcome": "FAIL"})

    def detail(self, text: str):
        self.entry["detail"] = text


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    return _Criterion(request.node.nodeid, marker.args[0] if marker else request.node.name)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(title): acceptance criterion reported in the summary")


def pytest_runtest_logreport(report):
    if report.when == "call" and report.nodeid in _ACCEPTANCE:
        _ACCEPTANCE[report.nodeid]["outcome"] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for entry in _ACCEPTANCE.values():
        line = f"[{entry['outcome']}] {entry['title']}"
        if entry["detail"]:
            line += f" -- {entry['detail']}"
        terminalreporter.write_line(line)
