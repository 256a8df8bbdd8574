"""Event segmentation from SA trajectories: Gaussian smoothing, reset detection, matching."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigurationError


@dataclass
class Segmentation:
    video_id: str
    boundaries: list[int]
    length: int
    event_names: list[str] = field(default_factory=list)
    labels: np.ndarray | None = None  # per-frame integer class, indexes ``classes``
    classes: list[str] = field(default_factory=list)

    def __post_init__(self):
        b = list(self.boundaries)
        if not b or b[0] != 0:
            raise ValueError(f"first boundary must be 0, got {b[:1]}")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing: {b}")
        if b[-1] >= self.length:
            raise ValueError(f"boundary {b[-1]} not inside video of length {self.length}")

    @classmethod
    def from_boundaries(cls, video_id: str, boundaries: Sequence[int], length: int,
                        event_names: Sequence[str] | None = None) -> Segmentation:
        """Segmentation with per-frame labels; events sharing a name share a class."""
        bounds = [int(b) for b in boundaries]
        names = list(event_names) if event_names is not None else [f"event_{i}" for i in range(len(bounds))]
        if len(names) != len(bounds):
            raise ValueError("need one event name per boundary")
        classes = list(dict.fromkeys(names))
        code = {c: i for i, c in enumerate(classes)}
        labels = np.empty(length, dtype=int)
        for start, end, name in zip(bounds, bounds[1:] + [length], names):
            labels[start:end] = code[name]
        return cls(video_id, bounds, length, names, labels, classes)

    @property
    def segments(self) -> list[tuple[int, int]]:
        """Half-open [start, end) frame ranges."""
        return list(zip(self.boundaries, self.boundaries[1:] + [self.length]))


@dataclass
class SmoothingConfig:
    window: int = 13
    sigma: float | None = None  # defaults to window / 6
    tau: float = 0.5
    min_gap: int = 13

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigurationError(f"smoothing window must be odd and >= 3, got {self.window}")
        if self.sigma is None:
            self.sigma = self.window / 6.0
        if self.sigma <= 0:
            raise ConfigurationError("sigma must be positive")
        if self.tau <= 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.min_gap < 1:
            raise ConfigurationError("min_gap must be >= 1")


def gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(trajectory, config: SmoothingConfig | None = None) -> np.ndarray:
    """Convolve with a normalized truncated Gaussian; edges use reflection padding."""
    config = config or SmoothingConfig()
    x = np.asarray(trajectory, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"trajectory must be 1-D, got shape {x.shape}")
    if len(x) < config.window:
        raise ValueError(f"trajectory of {len(x)} frames is shorter than the {config.window}-frame window")
    k = gaussian_kernel(config.window, config.sigma)
    half = config.window // 2
    padded = np.pad(x, half, mode="reflect")
    return np.convolve(padded, k, mode="valid")


def detect_boundaries(smoothed, config: SmoothingConfig | None = None, video_id: str = "") -> Segmentation:
    """Segment starts at every downward crossing of ``tau``.

    A crossing within ``min_gap`` frames of the previous boundary is dropped.
    Frame 0 always starts the first segment.
    """
    config = config or SmoothingConfig()
    s = np.asarray(smoothed, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty trajectory")
    bounds = [0]
    crossings = np.flatnonzero((s[:-1] >= config.tau) & (s[1:] < config.tau)) + 1
    for t in crossings:
        if t - bounds[-1] >= config.min_gap:
            bounds.append(int(t))
    return Segmentation(video_id, bounds, len(s))


def match_segments(predicted: Segmentation, truth: Segmentation) -> np.ndarray:
    """Per-frame labels for ``predicted`` expressed in ``truth``'s classes.

    Predicted segments and truth classes are paired one-to-one to maximize
    total frame overlap; segments left without a partner take the class they
    overlap most.
    """
    if predicted.length != truth.length:
        raise ValueError(f"length mismatch: predicted {predicted.length} vs truth {truth.length}")
    if truth.labels is None:
        raise ValueError("truth segmentation needs per-frame labels")
    n_cls = len(truth.classes) if truth.classes else int(truth.labels.max()) + 1
    segs = predicted.segments
    overlap = np.zeros((len(segs), n_cls), dtype=np.int64)
    for i, (s, e) in enumerate(segs):
        overlap[i] = np.bincount(truth.labels[s:e], minlength=n_cls)
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    assigned = dict(zip(rows.tolist(), cols.tolist()))
    out = np.empty(predicted.length, dtype=int)
    for i, (s, e) in enumerate(segs):
        out[s:e] = assigned.get(i, int(np.argmax(overlap[i])))
    return out


def segment_trajectory(trajectory, config: SmoothingConfig | None = None, video_id: str = ""):
    """Smooth then detect; returns (smoothed, Segmentation)."""
    config = config or SmoothingConfig()
    smoothed = gaussian_smooth(trajectory, config)
    return smoothed, detect_boundaries(smoothed, config, video_id)


def write_segments(path, rows: Sequence[tuple[Segmentation, np.ndarray | None, list[str]]]) -> None:
    """``segments.csv``: one row per predicted boundary with its matched event name."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "boundary_frame", "matched_event"])
        for seg, matched, classes in rows:
            for b in seg.boundaries:
                name = classes[matched[b]] if matched is not None and classes else ""
                w.writerow([seg.video_id, b, name])


def write_curve(path, curves: Sequence[tuple[str, Sequence[int], Sequence[float], Sequence[float]]]) -> None:
    """``curve.tsv``: video_id, frame, raw and smoothed trajectory values."""
    with open(path, "w") as fh:
        fh.write("video_id\tframe\traw\tsmoothed\n")
        for vid, frames, raw, smoothed in curves:
            for f, r, s in zip(frames, raw, smoothed):
                fh.write(f"{vid}\t{int(f)}\t{float(r)!r}\t{float(s)!r}\n")
