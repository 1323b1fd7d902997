import numpy as np
import pytest

from trailmark.geometry import CameraModel, forward_camera_extrinsic
from trailmark.trajectory import ProjectionWindow, WheelGeometry


@pytest.fixture
def camera():
    return CameraModel(200.0, 200.0, 160.0, 100.0, 320, 200, forward_camera_extrinsic((1.0, 0.0, 1.6), 0.12))


@pytest.fixture
def wheels():
    return WheelGeometry.symmetric(1.3, 0.75, 0.3)


@pytest.fixture
def window():
    return ProjectionWindow()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: one PASS/FAIL line per criterion, printed in
# the terminal summary whatever the outcome of the test body
_ACCEPTANCE = {}


@pytest.fixture
def note(request):
    """Append a short measurement to the criterion's report line."""
    notes = []
    request.node.acceptance_notes = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    if number in _ACCEPTANCE and _ACCEPTANCE[number].startswith("FAIL"):
        return
    notes = "; ".join(getattr(item, "acceptance_notes", []))
    status = "PASS" if rep.passed else "FAIL"
    _ACCEPTANCE[number] = f"{status}  {number:>2}. {title}" + (f"  [{notes}]" if notes else "")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
