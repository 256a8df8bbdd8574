"""Synthetic first-aid scenarios with known event boundaries and SA ground truth.

Each scenario scripts a sequence of events. Within an event every SA
dimension ramps linearly from 0 to a scripted peak. Two simulated raters
score equally sized clips from that ramp, the rated anchors are turned into
a label curve exactly as real ratings would be, and the bystander's pose is
then driven by that label curve so the scene features carry the SA signal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .data import DEFAULT_FRAME_SIZE, FPS, N_KEYPOINTS, FrameFeatures, ObjectFeatures
from .errors import ValidationError
from .labels import N_CLIPS, FrameLabels, SaAnnotation, clip_end_frame, video_labels
from .segmentation import Segmentation

# COCO-ordered standing pose, offsets in units of body height from the box center.
_BASE_POSE = np.array(
    [
        [0.00, -0.42], [-0.02, -0.44], [0.02, -0.44], [-0.04, -0.43], [0.04, -0.43],
        [-0.10, -0.30], [0.10, -0.30], [-0.14, -0.15], [0.14, -0.15], [-0.16, 0.00],
        [0.16, 0.00], [-0.07, 0.02], [0.07, 0.02], [-0.08, 0.24], [0.08, 0.24],
        [-0.08, 0.45], [0.08, 0.45],
    ]
)
# How each SA dimension deforms the pose: perception turns the head toward the
# scene, comprehension raises the arms, projection bends into a crouch.
_PER_SHIFT = np.zeros_like(_BASE_POSE)
_PER_SHIFT[0:5] = [0.20, 0.06]
_COM_SHIFT = np.zeros_like(_BASE_POSE)
_COM_SHIFT[[7, 8]] = [[-0.10, -0.30], [0.10, -0.30]]
_COM_SHIFT[[9, 10]] = [[-0.08, -0.60], [0.08, -0.60]]
_PRO_SHIFT = np.zeros_like(_BASE_POSE)
_PRO_SHIFT[0:13] = [0.0, 0.25]
_PRO_SHIFT[[13, 14]] = [[-0.10, 0.10], [0.10, 0.10]]


@dataclass
class EventSpec:
    name: str
    duration_frames: int
    peak: tuple[float, float, float] = (5.0, 5.0, 5.0)

    def __post_init__(self):
        if self.duration_frames <= 0:
            raise ValidationError(f"event {self.name!r}: duration must be positive")
        if any(not 0 <= p <= 5 for p in self.peak):
            raise ValidationError(f"event {self.name!r}: peaks must lie in [0, 5]")


@dataclass
class ScenarioScript:
    video_id: str
    events: list[EventSpec]
    fps: int = FPS
    position_noise: float = 0.0  # pixels
    rating_noise: float = 0.0  # rating units
    seed: int = 0
    n_clips: int = N_CLIPS
    frame_size: tuple[float, float] = DEFAULT_FRAME_SIZE

    @property
    def total_frames(self) -> int:
        return sum(e.duration_frames for e in self.events)

    @property
    def boundaries(self) -> list[int]:
        starts = np.cumsum([0] + [e.duration_frames for e in self.events])[:-1]
        return [int(s) for s in starts]

    @classmethod
    def from_dict(cls, raw: dict) -> ScenarioScript:
        try:
            events = [
                EventSpec(e["name"], int(e["duration_frames"]), tuple(e.get("peak", (5.0, 5.0, 5.0))))
                for e in raw["events"]
            ]
            return cls(
                video_id=str(raw["video_id"]),
                events=events,
                fps=int(raw.get("fps", FPS)),
                position_noise=float(raw.get("position_noise", 0.0)),
                rating_noise=float(raw.get("rating_noise", 0.0)),
                seed=int(raw.get("seed", 0)),
                n_clips=int(raw.get("n_clips", N_CLIPS)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad scenario script: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "events": [
                {"name": e.name, "duration_frames": e.duration_frames, "peak": list(e.peak)} for e in self.events
            ],
            "fps": self.fps,
            "position_noise": self.position_noise,
            "rating_noise": self.rating_noise,
            "seed": self.seed,
            "n_clips": self.n_clips,
        }


@dataclass
class Scenario:
    script: ScenarioScript
    frames: list[FrameFeatures]
    annotations: list[SaAnnotation]
    truth: Segmentation
    scripted_curve: np.ndarray  # (n, 3) noiseless ramps
    labels: FrameLabels = field(repr=False)

    @property
    def events(self) -> list[tuple[int, str]]:
        return list(zip(self.truth.boundaries, self.truth.event_names))


def scripted_curve(script: ScenarioScript) -> np.ndarray:
    """Per-frame ramps: 0 at each event's first frame, rising linearly to its peak."""
    parts = []
    for e in script.events:
        frac = np.arange(e.duration_frames) / e.duration_frames
        parts.append(frac[:, None] * np.asarray(e.peak, dtype=np.float64)[None, :])
    return np.vstack(parts)


def _spline_path(rng, knots: list[int], n: int, lo, hi) -> np.ndarray:
    """Smooth 2-D path through random waypoints placed at ``knots``."""
    pts = rng.uniform(lo, hi, size=(len(knots), 2))
    if len(knots) < 2:
        return np.repeat(pts, n, axis=0)
    spline = CubicSpline(np.asarray(knots, dtype=np.float64), pts, bc_type="clamped")
    return spline(np.arange(n, dtype=np.float64))


def generate_scenario(script: ScenarioScript) -> Scenario:
    """Render one scripted scenario into frames, ratings and true segmentation."""
    if not script.events:
        raise ValidationError("scenario needs at least one event")
    rng = np.random.default_rng(script.seed)
    n = script.total_frames
    bounds = script.boundaries
    width, height = script.frame_size
    ramps = scripted_curve(script)

    annotations = []
    for clip in range(script.n_clips):
        end = clip_end_frame(clip, n, script.n_clips)
        if end < 0 or end in bounds:
            continue
        for rater in ("r1", "r2"):
            noisy = ramps[end] + rng.normal(0.0, script.rating_noise, 3) if script.rating_noise else ramps[end]
            vals = np.clip(np.rint(noisy), 1, 5).astype(int)
            annotations.append(SaAnnotation(script.video_id, clip, rater, *(int(v) for v in vals)))

    events = [(b, e.name) for b, e in zip(bounds, script.events)]
    labels = video_labels(annotations, {script.video_id: events}, {script.video_id: n}, script.n_clips)[
        script.video_id
    ]
    sa = labels.curve / 5.0

    knots = bounds + [n - 1] if bounds[-1] != n - 1 else bounds
    lo, hi = (0.15 * width, 0.35 * height), (0.85 * width, 0.75 * height)
    paths = {
        "bystander": _spline_path(rng, knots, n, lo, hi),
        "instructor": _spline_path(rng, knots, n, lo, hi),
        "patient": np.repeat(rng.uniform(lo, hi, size=(1, 2)), n, axis=0),
        "drone": _spline_path(rng, knots, n, (0.1 * width, 0.1 * height), (0.9 * width, 0.6 * height)),
    }
    sizes = {"bystander": (160.0, 380.0), "instructor": (150.0, 360.0), "patient": (380.0, 140.0), "drone": (90.0, 50.0)}
    track_ids = {"bystander": 1, "instructor": 2, "patient": 3, "drone": 4}
    noise = script.position_noise

    frames = []
    for i in range(n):
        objects = {}
        for role, path in paths.items():
            cx, cy = path[i]
            w, h = sizes[role]
            x1, y1, x2, y2 = cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2
            if noise:
                x1, y1, x2, y2 = np.array([x1, y1, x2, y2]) + rng.normal(0.0, noise, 4)
                x1, x2 = min(x1, x2 - 1.0), max(x2, x1 + 1.0)
                y1, y2 = min(y1, y2 - 1.0), max(y2, y1 + 1.0)
            depth = 0.2 + 0.6 * (1.0 - cy / height)
            if noise:
                depth += rng.normal(0.0, 0.01)
            kp = None
            if role != "drone":
                pose = _BASE_POSE.copy()
                if role == "bystander":
                    p, c, r = sa[i]
                    pose = pose + p * _PER_SHIFT + c * _COM_SHIFT + r * _PRO_SHIFT
                elif role == "patient":
                    pose = pose[:, ::-1] * [1.6, 0.6]
                kp = np.array([cx, cy]) + pose * max(w, h)
                if noise:
                    kp = kp + rng.normal(0.0, noise, (N_KEYPOINTS, 2))
            objects[role] = ObjectFeatures(
                role, (float(x1), float(y1), float(x2), float(y2)), kp, float(depth), track_ids[role]
            )
        frames.append(FrameFeatures(script.video_id, i, i * 1000.0 / script.fps, objects))

    truth = Segmentation.from_boundaries(script.video_id, bounds, n, [e.name for e in script.events])
    return Scenario(script, frames, annotations, truth, ramps, labels)


DEFAULT_EVENT_NAMES = ("approach", "call_for_help", "retrieve_naloxone", "administer", "monitor")


def default_script(
    n_videos: int = 11,
    seed: int = 0,
    min_seconds: float = 120.0,
    max_seconds: float = 180.0,
    fps: int = FPS,
    position_noise: float = 2.0,
    rating_noise: float = 0.3,
    n_clips: int = N_CLIPS,
) -> list[ScenarioScript]:
    """Scripts shaped like the drone-assisted naloxone recordings: five events per video."""
    rng = np.random.default_rng(seed)
    scripts = []
    for v in range(n_videos):
        total = int(rng.uniform(min_seconds, max_seconds) * fps)
        weights = rng.uniform(0.6, 1.4, size=len(DEFAULT_EVENT_NAMES))
        durations = np.floor(weights / weights.sum() * total).astype(int)
        durations[-1] += total - durations.sum()
        events = []
        for name, dur in zip(DEFAULT_EVENT_NAMES, durations):
            per = float(rng.choice([3.0, 4.0, 5.0]))
            com = float(rng.choice([1.0, 2.0, 4.0, 5.0]))
            pro = float(rng.choice([1.0, 2.0, 4.0, 5.0]))
            events.append(EventSpec(name, int(dur), (per, com, pro)))
        scripts.append(
            ScenarioScript(f"video_{v:02d}", events, fps, position_noise, rating_noise, int(rng.integers(2**31)), n_clips)
        )
    return scripts


def load_script(path) -> list[ScenarioScript]:
    """Read a JSON script: either one scenario object or ``{"videos": [...]}``."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read script {path}: {exc}") from None
    if isinstance(raw, dict) and "videos" in raw:
        items = raw["videos"]
    elif isinstance(raw, list):
        items = raw
    else:
        items = [raw]
    scripts = [ScenarioScript.from_dict(item) for item in items]
    if len({s.video_id for s in scripts}) != len(scripts):
        raise ValidationError("duplicate video_id in script")
    return scripts
