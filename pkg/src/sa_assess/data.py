"""Frame-feature schema, JSONL/CSV I/O, windowing and class balancing."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

ROLES = ("bystander", "instructor", "patient", "drone")
HUMAN_ROLES = ROLES[:3]
N_KEYPOINTS = 17
SEQ_LEN = 15
FPS = 50
# Carry a missing detection forward for at most 0.5 s at 50 fps.
MAX_CARRY_FRAMES = 25
DEFAULT_FRAME_SIZE = (1920.0, 1080.0)


@dataclass
class ObjectFeatures:
    role: str
    bbox: tuple[float, float, float, float]
    keypoints: np.ndarray | None  # (17, 2) pixels, None for the drone
    depth: float
    track_id: int
    imputed: bool = False

    @property
    def center(self) -> tuple[float, float]:
        x1, y1, x2, y2 = self.bbox
        return (x1 + x2) / 2.0, (y1 + y2) / 2.0

    def to_json(self) -> dict:
        out = {"bbox": [float(v) for v in self.bbox]}
        if self.keypoints is not None:
            out["keypoints"] = [[float(x), float(y)] for x, y in self.keypoints]
        out["depth"] = float(self.depth)
        out["track_id"] = int(self.track_id)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObjectFeatures):
            return NotImplemented
        same_kp = (self.keypoints is None and other.keypoints is None) or (
            self.keypoints is not None
            and other.keypoints is not None
            and np.array_equal(self.keypoints, other.keypoints)
        )
        return (
            self.role == other.role
            and tuple(self.bbox) == tuple(other.bbox)
            and same_kp
            and self.depth == other.depth
            and self.track_id == other.track_id
            and self.imputed == other.imputed
        )


@dataclass
class FrameFeatures:
    video_id: str
    frame_idx: int
    t_ms: float
    objects: dict[str, ObjectFeatures] = field(default_factory=dict)

    @property
    def imputed_roles(self) -> list[str]:
        return [r for r in ROLES if r in self.objects and self.objects[r].imputed]

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "frame_idx": self.frame_idx,
            "t_ms": self.t_ms,
            "objects": {r: o.to_json() for r, o in self.objects.items() if not o.imputed},
        }


def parse_object(role: str, raw: dict) -> ObjectFeatures:
    if role not in ROLES:
        raise ValidationError(f"unknown role {role!r}")
    try:
        bbox = tuple(float(v) for v in raw["bbox"])
        depth = float(raw["depth"])
        track_id = int(raw["track_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{role}: missing or malformed field ({exc})") from None
    if len(bbox) != 4:
        raise ValidationError(f"{role}: bbox needs 4 values, got {len(bbox)}")
    x1, y1, x2, y2 = bbox
    if not x1 < x2:
        raise ValidationError(f"{role}: bbox requires x1 < x2, got x1={x1}, x2={x2}")
    if not y1 < y2:
        raise ValidationError(f"{role}: bbox requires y1 < y2, got y1={y1}, y2={y2}")
    if not np.isfinite(depth) or not all(np.isfinite(bbox)):
        raise ValidationError(f"{role}: non-finite bbox or depth")
    kp = raw.get("keypoints")
    if role == "drone":
        if kp is not None:
            raise ValidationError("drone: keypoints must be absent")
        keypoints = None
    else:
        if kp is None:
            raise ValidationError(f"{role}: keypoints missing")
        keypoints = np.asarray(kp, dtype=np.float64)
        if keypoints.shape != (N_KEYPOINTS, 2):
            raise ValidationError(f"{role}: keypoints must be 17 (x, y) pairs, got shape {keypoints.shape}")
        if not np.all(np.isfinite(keypoints)):
            raise ValidationError(f"{role}: non-finite keypoints")
    return ObjectFeatures(role, bbox, keypoints, depth, track_id)


def parse_frame(record: dict) -> FrameFeatures:
    try:
        video_id = str(record["video_id"])
        frame_idx = int(record["frame_idx"])
        t_ms = float(record["t_ms"])
        raw_objects = record["objects"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"missing or malformed frame field ({exc})") from None
    if frame_idx < 0:
        raise ValidationError(f"frame_idx must be non-negative, got {frame_idx}")
    if not isinstance(raw_objects, dict):
        raise ValidationError("objects must be a mapping of role to features")
    objects = {role: parse_object(role, raw) for role, raw in raw_objects.items()}
    return FrameFeatures(video_id, frame_idx, t_ms, objects)


def _zero_object(role: str) -> ObjectFeatures:
    kp = None if role == "drone" else np.zeros((N_KEYPOINTS, 2))
    return ObjectFeatures(role, (0.0, 0.0, 0.0, 0.0), kp, 0.0, -1, imputed=True)


def impute_missing(frames: list[FrameFeatures], max_carry: int = MAX_CARRY_FRAMES) -> None:
    """Fill absent roles in one video's frames, in place.

    A missing object copies the last observed one if it was seen within
    ``max_carry`` frames; otherwise it is zero-filled. Either way it is flagged.
    """
    last_seen: dict[str, tuple[int, ObjectFeatures]] = {}
    for frame in frames:
        for role in ROLES:
            obj = frame.objects.get(role)
            if obj is not None and not obj.imputed:
                last_seen[role] = (frame.frame_idx, obj)
                continue
            prev = last_seen.get(role)
            if prev is not None and frame.frame_idx - prev[0] <= max_carry:
                src = prev[1]
                kp = None if src.keypoints is None else src.keypoints.copy()
                frame.objects[role] = ObjectFeatures(role, src.bbox, kp, src.depth, src.track_id, imputed=True)
            else:
                frame.objects[role] = _zero_object(role)
        frame.objects = {r: frame.objects[r] for r in ROLES}


def load_frames(path, max_carry: int = MAX_CARRY_FRAMES) -> list[FrameFeatures]:
    """Read and validate ``frames.jsonl``; returns frames sorted by (video, frame)."""
    frames: list[FrameFeatures] = []
    last_idx: dict[str, int] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                frame = parse_frame(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            prev = last_idx.get(frame.video_id)
            if prev is not None and frame.frame_idx <= prev:
                raise ValidationError(
                    f"{path}:{lineno}: frame {frame.frame_idx} of video {frame.video_id!r} "
                    f"is not after frame {prev}"
                )
            last_idx[frame.video_id] = frame.frame_idx
            frames.append(frame)
    frames.sort(key=lambda f: (f.video_id, f.frame_idx))
    for video in group_by_video(frames).values():
        impute_missing(video, max_carry)
        n = sum(len(f.imputed_roles) for f in video)
        if n:
            logger.info("video %s: imputed %d missing detections", video[0].video_id, n)
    return frames


def write_frames(path, frames: Iterable[FrameFeatures]) -> None:
    with open(path, "w") as fh:
        for frame in frames:
            fh.write(json.dumps(frame.to_json(), separators=(",", ":")) + "\n")


def group_by_video(frames: Iterable[FrameFeatures]) -> dict[str, list[FrameFeatures]]:
    out: dict[str, list[FrameFeatures]] = defaultdict(list)
    for f in frames:
        out[f.video_id].append(f)
    return dict(sorted(out.items()))


# -- events.csv ---------------------------------------------------------------

def load_events(path) -> dict[str, list[tuple[int, str]]]:
    """Read ``events.csv`` into ``{video_id: [(boundary_frame, event_name), ...]}``."""
    out: dict[str, list[tuple[int, str]]] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["video_id", "boundary_frame", "event_name"]
        if reader.fieldnames != expected:
            raise ValidationError(f"{path}: header must be {','.join(expected)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                frame = int(row["boundary_frame"])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: bad boundary_frame {row['boundary_frame']!r}") from None
            events = out[row["video_id"]]
            if events and frame <= events[-1][0]:
                raise ValidationError(f"{path}:{lineno}: boundaries must ascend within a video")
            events.append((frame, row["event_name"]))
    return dict(sorted(out.items()))


def write_events(path, events: dict[str, list[tuple[int, str]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "boundary_frame", "event_name"])
        for vid, rows in events.items():
            for frame, name in rows:
                w.writerow([vid, frame, name])


# -- windows -----------------------------------------------------------------

@dataclass
class SequenceSample:
    features: np.ndarray  # (length, f_total)
    video_id: str
    start_frame: int
    target_binary: np.ndarray | None = None  # (3,) of {0, 1}
    target_ternary: int | None = None

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.features.shape[0] - 1


def window_sequences(
    videos: dict[str, np.ndarray], length: int = SEQ_LEN, stride: int = SEQ_LEN
) -> list[SequenceSample]:
    """Cut each video's (n_frames, f) matrix into windows; remainders are dropped.

    ``start_frame`` is the row offset inside the video.
    """
    if length < 1 or stride < 1:
        raise ValueError(f"length and stride must be >= 1, got {length}, {stride}")
    out = []
    dims = {v.shape[1] for v in videos.values() if v.ndim == 2}
    if len(dims) > 1:
        raise ValidationError(f"feature width differs across videos: {sorted(dims)}")
    for vid, feats in videos.items():
        n = feats.shape[0]
        if n < length:
            logger.warning("video %s has %d frames, shorter than window %d; no windows", vid, n, length)
            continue
        for start in range(0, n - length + 1, stride):
            out.append(SequenceSample(feats[start : start + length], vid, start))
    return out


def balance_resample(
    samples: Sequence,
    class_of: Callable[[object], Hashable],
    seed: int,
    mode: str = "down",
    count: int | None = None,
    classes: Iterable[Hashable] | None = None,
) -> list:
    """Equalize class counts by downsampling, or by upsampling with replacement.

    ``mode="down"`` keeps ``min count`` of every class; ``mode="up"`` draws
    ``count`` per class (default: the largest class count), sampling with
    replacement only for classes smaller than that.
    """
    by_class: dict[Hashable, list[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        by_class[class_of(s)].append(i)
    wanted = sorted(set(classes) | set(by_class)) if classes is not None else sorted(by_class)
    hist = {c: len(by_class.get(c, [])) for c in wanted}
    if not wanted or any(n == 0 for n in hist.values()):
        raise ValueError(f"cannot balance: empty class in histogram {hist}")
    rng = np.random.default_rng(seed)
    if mode == "down":
        target = min(hist.values()) if count is None else count
        if target > min(hist.values()):
            raise ValueError(f"downsample count {target} exceeds smallest class in {hist}")
    elif mode == "up":
        target = max(hist.values()) if count is None else count
    else:
        raise ValueError(f"unknown mode {mode!r}")
    chosen: list[int] = []
    for c in wanted:
        idx = np.asarray(by_class[c])
        replace = target > len(idx)
        if replace:
            pick = np.concatenate([idx, rng.choice(idx, size=target - len(idx), replace=True)])
        else:
            pick = rng.choice(idx, size=target, replace=False)
        chosen.extend(int(i) for i in pick)
    order = rng.permutation(len(chosen))
    return [samples[chosen[i]] for i in order]


def class_histogram(labels: Iterable[Hashable]) -> dict:
    return dict(sorted(Counter(labels).items()))
