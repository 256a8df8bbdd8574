"""Frame schema ingestion, imputation, windowing, balancing and the scenario generator."""

import json

import numpy as np
import pytest
from conftest import make_frame, two_event_script

from sa_assess.data import (
    MAX_CARRY_FRAMES,
    ROLES,
    balance_resample,
    class_histogram,
    group_by_video,
    load_events,
    load_frames,
    window_sequences,
    write_events,
    write_frames,
)
from sa_assess.errors import ValidationError
from sa_assess.synth import EventSpec, ScenarioScript, default_script, generate_scenario, load_script


def _write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_load_three_records(tmp_path):
    path = tmp_path / "frames.jsonl"
    write_frames(path, [make_frame("v", i) for i in range(3)])
    frames = load_frames(path)
    assert len(frames) == 3
    assert [f.frame_idx for f in frames] == [0, 1, 2]
    assert all(not f.imputed_roles for f in frames)


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    frames = [make_frame("a", i, shift=float(rng.normal())) for i in range(5)]
    for f in frames:
        f.objects["bystander"].keypoints += rng.normal(size=(17, 2))
    path = tmp_path / "frames.jsonl"
    write_frames(path, frames)
    assert load_frames(path) == frames


def test_rejects_inverted_bbox_with_line_number(tmp_path):
    rec = make_frame("v", 0).to_json()
    bad = make_frame("v", 1).to_json()
    bad["objects"]["patient"]["bbox"] = [300, 10, 200, 50]
    path = tmp_path / "frames.jsonl"
    _write_jsonl(path, [rec, bad])
    with pytest.raises(ValidationError, match=r":2: .*x1 < x2"):
        load_frames(path)


def test_rejects_out_of_order_frames(tmp_path):
    path = tmp_path / "frames.jsonl"
    _write_jsonl(path, [make_frame("v", 5).to_json(), make_frame("v", 3).to_json()])
    with pytest.raises(ValidationError, match="not after"):
        load_frames(path)


def test_rejects_drone_keypoints_and_bad_json(tmp_path):
    rec = make_frame("v", 0).to_json()
    rec["objects"]["drone"]["keypoints"] = [[0, 0]] * 17
    path = tmp_path / "frames.jsonl"
    _write_jsonl(path, [rec])
    with pytest.raises(ValidationError, match="drone"):
        load_frames(path)
    path.write_text("{not json\n")
    with pytest.raises(ValidationError, match=":1:"):
        load_frames(path)


def test_missing_drone_is_carried_forward_and_flagged(tmp_path):
    first = make_frame("v", 0)
    second = make_frame("v", 1, roles=ROLES[:3])
    path = tmp_path / "frames.jsonl"
    write_frames(path, [first, second])
    frames = load_frames(path)
    assert frames[1].imputed_roles == ["drone"]
    carried = frames[1].objects["drone"]
    assert carried.bbox == first.objects["drone"].bbox and carried.track_id == first.objects["drone"].track_id


def test_long_gap_zero_fills(tmp_path):
    frames = [make_frame("v", 0), make_frame("v", MAX_CARRY_FRAMES + 1, roles=ROLES[:3])]
    path = tmp_path / "frames.jsonl"
    write_frames(path, frames)
    drone = load_frames(path)[1].objects["drone"]
    assert drone.imputed and drone.track_id == -1 and drone.bbox == (0.0, 0.0, 0.0, 0.0)


def test_events_round_trip_and_order(tmp_path):
    events = {"a": [(0, "approach"), (120, "call_for_help")], "b": [(0, "approach")]}
    path = tmp_path / "events.csv"
    write_events(path, events)
    assert path.read_text().splitlines()[0] == "video_id,boundary_frame,event_name"
    assert load_events(path) == events
    path.write_text("video_id,boundary_frame,event_name\na,10,x\na,5,y\n")
    with pytest.raises(ValidationError, match="ascend"):
        load_events(path)


@pytest.mark.parametrize("n, expected", [(45, 3), (14, 0), (16, 1)])
def test_window_counts(n, expected):
    wins = window_sequences({"v": np.arange(n * 2.0).reshape(n, 2)})
    assert len(wins) == expected
    if expected:
        assert wins[0].start_frame == 0 and wins[0].end_frame == 14


def test_windows_never_overlap_or_span_videos():
    videos = {"a": np.zeros((47, 3)), "b": np.ones((30, 3))}
    wins = window_sequences(videos)
    assert len(wins) == 47 // 15 + 30 // 15
    seen = set()
    for w in wins:
        frames = {(w.video_id, i) for i in range(w.start_frame, w.end_frame + 1)}
        assert not frames & seen
        seen |= frames
        assert np.all(w.features == videos[w.video_id][0])


def test_window_width_mismatch():
    with pytest.raises(ValidationError):
        window_sequences({"a": np.zeros((15, 3)), "b": np.zeros((15, 4))})


def test_downsample_to_minimum():
    items = [0] * 10 + [1] * 5
    out = balance_resample(items, lambda x: x, seed=0, mode="down")
    assert class_histogram(out) == {0: 5, 1: 5}


def test_balanced_input_is_permutation():
    items = list(range(12))
    out = balance_resample(items, lambda x: x % 3, seed=1, mode="down")
    assert sorted(out) == items


def test_upsample_with_replacement():
    items = [("a", 0)] * 3 + [("b", 1)] * 3 + [("c", 2)]
    out = balance_resample(items, lambda x: x[1], seed=3, mode="up", count=3)
    assert class_histogram(x[1] for x in out) == {0: 3, 1: 3, 2: 3}
    assert out == balance_resample(items, lambda x: x[1], seed=3, mode="up", count=3)


def test_empty_class_reports_histogram():
    with pytest.raises(ValueError, match="histogram"):
        balance_resample([0, 0, 1], lambda x: x, seed=0, classes=[0, 1, 2])


# -- synthetic generator -----------------------------------------------------------

def test_two_event_scenario_layout():
    sc = generate_scenario(two_event_script())
    assert len(sc.frames) == 200
    assert sc.truth.boundaries == [0, 100]
    assert [f.frame_idx for f in sc.frames] == list(range(200))
    assert all(set(f.objects) == set(ROLES) for f in sc.frames)


def test_zero_noise_bbox_centres_follow_spline():
    sc = generate_scenario(two_event_script())
    centres = np.array([f.objects["bystander"].center for f in sc.frames])
    assert np.all(np.isfinite(centres))
    # A clamped cubic spline through knots at 0, 100 and 199 has a continuous,
    # small second difference; seeded noise would not.
    assert np.abs(np.diff(centres, 2, axis=0)).max() < 1.0


def test_scripted_ramp_midpoint():
    sc = generate_scenario(two_event_script())
    assert sc.scripted_curve[50, 0] == pytest.approx(2.5)
    assert np.all(sc.scripted_curve[[0, 100]] == 0)
    assert np.all(sc.labels.curve[[0, 100]] == 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_boundaries_equal_cumulative_durations(seed):
    rng = np.random.default_rng(seed)
    durations = rng.integers(20, 80, size=4)
    events = [EventSpec(f"e{i}", int(d)) for i, d in enumerate(durations)]
    sc = generate_scenario(ScenarioScript("s", events, seed=seed, position_noise=1.0))
    assert sc.truth.boundaries == [0, *np.cumsum(durations)[:-1].tolist()]


def test_generator_deterministic():
    a = generate_scenario(two_event_script(seed=4, noise=2.0))
    b = generate_scenario(two_event_script(seed=4, noise=2.0))
    assert a.frames == b.frames and a.annotations == b.annotations


def test_default_script_matches_recording_scale():
    scripts = default_script()
    assert len(scripts) == 11
    total = sum(s.total_frames for s in scripts)
    assert 66_000 <= total <= 99_000
    assert all(len(s.events) == 5 and s.fps == 50 for s in scripts)


def test_load_script_forms(tmp_path):
    one = two_event_script().to_dict()
    path = tmp_path / "s.json"
    path.write_text(json.dumps(one))
    assert load_script(path)[0].boundaries == [0, 100]
    path.write_text(json.dumps({"videos": [one, {**one, "video_id": "other"}]}))
    assert [s.video_id for s in load_script(path)] == ["two", "other"]
    path.write_text(json.dumps({"videos": [one, one]}))
    with pytest.raises(ValidationError, match="duplicate"):
        load_script(path)
    path.write_text(json.dumps({"video_id": "x", "events": [{"name": "e", "duration_frames": 0}]}))
    with pytest.raises(ValidationError):
        load_script(path)


def test_group_by_video_sorted():
    frames = [make_frame("b", 0), make_frame("a", 0), make_frame("a", 1)]
    groups = group_by_video(frames)
    assert list(groups) == ["a", "b"] and len(groups["a"]) == 2
