import numpy as np
import pytest

from sa_assess.data import ROLES, FrameFeatures, ObjectFeatures
from sa_assess.synth import EventSpec, ScenarioScript


def make_object(role, x=100.0, y=100.0, w=50.0, h=120.0, depth=0.5, track_id=1):
    kp = None if role == "drone" else np.column_stack([np.linspace(x, x + w, 17), np.linspace(y, y + h, 17)])
    return ObjectFeatures(role, (x, y, x + w, y + h), kp, depth, track_id)


def make_frame(video_id="v", frame_idx=0, roles=ROLES, shift=0.0):
    objects = {r: make_object(r, x=100.0 + 200 * i + shift, track_id=i + 1) for i, r in enumerate(roles)}
    return FrameFeatures(video_id, frame_idx, frame_idx * 20.0, objects)


def two_event_script(n=100, seed=0, noise=0.0, **kw):
    events = [EventSpec("first", n, (5.0, 5.0, 5.0)), EventSpec("second", n, (5.0, 5.0, 5.0))]
    return ScenarioScript("two", events, position_noise=noise, seed=seed, **kw)


@pytest.fixture
def frame_factory():
    return make_frame


# One pass/fail line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
