"""Expert SA ratings -> per-frame curves -> binary and ternary targets."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

DIMENSIONS = ("perception", "comprehension", "projection")
N_CLIPS = 10
HIGH_SA_THRESHOLD = 3.0


@dataclass(frozen=True)
class SaAnnotation:
    video_id: str
    clip_idx: int
    rater_id: str
    perception: float
    comprehension: float
    projection: float

    def __post_init__(self):
        if self.clip_idx < 0:
            raise ValidationError(f"clip_idx must be non-negative, got {self.clip_idx}")
        for dim in DIMENSIONS:
            v = getattr(self, dim)
            if not 1 <= v <= 5:
                raise ValidationError(f"{dim} rating must be in [1, 5], got {v}")

    @property
    def ratings(self) -> tuple[float, float, float]:
        return (self.perception, self.comprehension, self.projection)


def load_ratings(path) -> list[SaAnnotation]:
    header = ["video_id", "clip_idx", "rater_id", *DIMENSIONS]
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != header:
            raise ValidationError(f"{path}: header must be {','.join(header)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(
                    SaAnnotation(
                        row["video_id"], int(row["clip_idx"]), row["rater_id"],
                        *(int(row[d]) for d in DIMENSIONS),
                    )
                )
            except (ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return out


def write_ratings(path, annotations: Iterable[SaAnnotation]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "clip_idx", "rater_id", *DIMENSIONS])
        for a in annotations:
            w.writerow([a.video_id, a.clip_idx, a.rater_id, *(int(v) for v in a.ratings)])


def clip_end_frame(clip_idx: int, video_len: int, n_clips: int = N_CLIPS) -> int:
    """Last frame of clip ``clip_idx`` when the video is cut into equal clips."""
    return ((clip_idx + 1) * video_len) // n_clips - 1


def average_raters(annotations: Iterable[SaAnnotation]) -> dict[str, dict[int, np.ndarray]]:
    """Mean (per, com, pro) over raters, keyed by video then clip."""
    acc: dict[tuple[str, int], list] = defaultdict(list)
    for a in annotations:
        acc[(a.video_id, a.clip_idx)].append(a.ratings)
    out: dict[str, dict[int, np.ndarray]] = defaultdict(dict)
    for (vid, clip), rows in sorted(acc.items()):
        out[vid][clip] = np.mean(np.asarray(rows, dtype=np.float64), axis=0)
    return dict(out)


def build_curve(
    anchors: dict[int, Sequence[float]] | Sequence[tuple[int, Sequence[float]]],
    boundaries: Sequence[int],
    video_len: int,
) -> np.ndarray:
    """Per-frame (per, com, pro) curve of shape (video_len, 3).

    ``anchors`` maps frame -> rater-averaged ratings. Frame 0 and every
    boundary are reset points with value 0. Inside an event the curve is the
    linear interpolation of the reset and the event's anchors; after an
    event's last anchor it holds that value until the next reset.
    """
    items = sorted(anchors.items()) if isinstance(anchors, dict) else sorted(anchors, key=lambda a: a[0])
    if not items:
        raise ValidationError("build_curve needs at least one annotation anchor")
    frames = [f for f, _ in items]
    if len(set(frames)) != len(frames):
        raise ValidationError("duplicate annotation anchors at one frame")
    bounds = sorted(set(int(b) for b in boundaries))
    if list(boundaries) and list(boundaries) != sorted(boundaries):
        raise ValidationError("boundaries must be sorted")
    for b in bounds:
        if not 0 <= b < video_len:
            raise ValidationError(f"boundary {b} outside video of {video_len} frames")
    if not bounds or bounds[0] != 0:
        bounds = [0] + bounds
    for f in frames:
        if not 0 <= f < video_len:
            raise ValidationError(f"anchor frame {f} outside video of {video_len} frames")
        if f in bounds:
            raise ValidationError(f"annotation anchor at frame {f} coincides with a reset boundary")

    curve = np.zeros((video_len, 3))
    ends = bounds[1:] + [video_len]
    for start, end in zip(bounds, ends):
        xs = [start] + [f for f in frames if start < f < end]
        ys = [np.zeros(3)] + [np.asarray(v, dtype=np.float64) for f, v in items if start < f < end]
        ys_arr = np.vstack(ys)
        t = np.arange(start, end)
        for d in range(3):
            curve[start:end, d] = np.interp(t, xs, ys_arr[:, d])
        curve[xs[1:], :] = ys_arr[1:]
    return curve


def binarize(value):
    """1 where the SA value is at least 3, else 0."""
    return (np.asarray(value) >= HIGH_SA_THRESHOLD).astype(int)


def accumulate_ternary(bits) -> tuple:
    """Length of the all-high prefix of [per, com, pro], and that length capped at 2.

    Works on a single triple or on an (n, 3) array.
    """
    b = np.asarray(bits, dtype=int)
    if np.any((b != 0) & (b != 1)):
        raise ValueError(f"bits must be 0 or 1, got {bits}")
    acc = np.cumprod(b, axis=-1).sum(axis=-1)
    cls = np.minimum(acc, 2)
    if b.ndim == 1:
        return int(acc), int(cls)
    return acc, cls


@dataclass
class FrameLabels:
    """Per-frame targets derived from one video's SA curve."""

    curve: np.ndarray  # (n, 3)
    binary: np.ndarray  # (n, 3) in {0, 1}
    accumulated: np.ndarray  # (n,) in {0..3}
    ternary: np.ndarray  # (n,) in {0, 1, 2}

    @classmethod
    def from_curve(cls, curve: np.ndarray) -> FrameLabels:
        binary = binarize(curve)
        acc, ter = accumulate_ternary(binary)
        return cls(curve, binary, acc, ter)


def video_labels(
    annotations: Iterable[SaAnnotation],
    events: dict[str, list[tuple[int, str]]],
    video_lengths: dict[str, int],
    n_clips: int = N_CLIPS,
) -> dict[str, FrameLabels]:
    """Build labels for every video that has both ratings and a known length.

    Clips whose final frame lands on a reset boundary are dropped, since the
    reset takes precedence there.
    """
    averaged = average_raters(annotations)
    out = {}
    for vid, clips in averaged.items():
        if vid not in video_lengths:
            continue
        n = video_lengths[vid]
        bounds = [b for b, _ in events.get(vid, [])]
        resets = set(bounds) | {0}
        anchors = {}
        for clip, vals in clips.items():
            if clip >= n_clips:
                raise ValidationError(f"video {vid}: clip_idx {clip} exceeds the {n_clips}-clip split")
            frame = clip_end_frame(clip, n, n_clips)
            if frame not in resets:
                anchors[frame] = vals
        out[vid] = FrameLabels.from_curve(build_curve(anchors, bounds, n))
    return out


def write_labels(path, labels: dict[str, FrameLabels], frame_ids: dict[str, Sequence[int]] | None = None) -> None:
    with open(path, "w") as fh:
        for vid, lab in labels.items():
            ids = frame_ids[vid] if frame_ids else range(len(lab.ternary))
            for i, fidx in enumerate(ids):
                rec = {
                    "video_id": vid,
                    "frame_idx": int(fidx),
                    "per": float(lab.curve[i, 0]),
                    "com": float(lab.curve[i, 1]),
                    "pro": float(lab.curve[i, 2]),
                    "bin": [int(v) for v in lab.binary[i]],
                    "acc": int(lab.accumulated[i]),
                    "cls": int(lab.ternary[i]),
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
