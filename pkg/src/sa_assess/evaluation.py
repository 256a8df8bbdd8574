"""Classification and segmentation metrics, and report tables."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows truth, columns prediction
    classes: list

    @classmethod
    def from_labels(cls, truth, pred, classes=None) -> ConfusionMatrix:
        truth, pred = np.asarray(truth), np.asarray(pred)
        if classes is None:
            classes = sorted(set(truth.tolist()) | set(pred.tolist()))
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(truth.tolist(), pred.tolist()):
            counts[index[t], index[p]] += 1
        return cls(counts, list(classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricReport:
    acc: float | None = None
    bacc: float | None = None
    f1_macro: float | None = None
    precision_macro: float | None = None
    auc: float | None = None
    mof: float | None = None
    iou: float | None = None
    per_class: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None and v != {}}


def binary_auc(labels, scores) -> float:
    """Area under the ROC curve via the rank statistic; tied scores count half."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classification_metrics(truth, pred, scores=None, classes=None) -> MetricReport:
    """Accuracy, balanced accuracy, macro F1/precision and macro one-vs-rest AUC.

    Classes absent from ``truth`` are left out of the macro averages. With
    ``scores`` of shape (n, K) the AUC column k scores class ``classes[k]``;
    a 1-D ``scores`` is read as the score of the larger of two classes.
    """
    truth, pred = np.asarray(truth), np.asarray(pred)
    if truth.shape != pred.shape:
        raise ValueError(f"truth and prediction lengths differ: {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValueError("no samples")
    cm = ConfusionMatrix.from_labels(truth, pred, classes)
    counts = cm.counts
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    present = support > 0
    for c, n in zip(cm.classes, support):
        if n == 0:
            logger.warning("class %r absent from truth; excluded from macro averages", c)
    tp = np.diag(counts).astype(np.float64)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)

    report = MetricReport(
        acc=float(tp.sum() / cm.total),
        bacc=float(recall[present].mean()),
        f1_macro=float(f1[present].mean()),
        precision_macro=float(precision[present].mean()),
    )
    report.per_class = {
        str(c): {"recall": float(r), "precision": float(p), "f1": float(f), "support": int(n)}
        for c, r, p, f, n in zip(cm.classes, recall, precision, f1, support)
    }
    if scores is not None:
        sc = np.asarray(scores, dtype=np.float64)
        if sc.ndim == 1:
            if len(cm.classes) != 2:
                raise ValueError("1-D scores need exactly two classes")
            report.auc = binary_auc(truth == cm.classes[1], sc)
        else:
            aucs = []
            for k, c in enumerate(cm.classes):
                pos = truth == c
                if 0 < pos.sum() < len(truth):
                    aucs.append(binary_auc(pos, sc[:, k]))
            report.auc = float(np.mean(aucs)) if aucs else None
    return report


def mof(truth, pred) -> float:
    """Fraction of frames whose predicted label equals the true label."""
    truth, pred = np.asarray(truth), np.asarray(pred)
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValueError("empty label sequence")
    return float(np.mean(truth == pred))


def iou(truth, pred, background=None) -> float:
    """Mean over true classes of |frames labelled c in both| / |frames labelled c in either|.

    A ``background`` label, if given, marks frames outside every event; it is
    not scored as a class of its own.
    """
    truth, pred = np.asarray(truth), np.asarray(pred)
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {pred.shape}")
    classes = np.unique(truth)
    if background is not None:
        classes = classes[classes != background]
    if classes.size == 0:
        raise ValueError("no ground-truth events")
    scores = []
    for c in classes:
        a, b = truth == c, pred == c
        scores.append(np.logical_and(a, b).sum() / np.logical_or(a, b).sum())
    return float(np.mean(scores))


def balanced_mof(truth, pred, seed: int = 0) -> float:
    """MoF on frames downsampled so every true class contributes equally."""
    from .data import balance_resample

    truth, pred = np.asarray(truth), np.asarray(pred)
    idx = balance_resample(list(range(len(truth))), lambda i: truth[i].item(), seed)
    return mof(truth[idx], pred[idx])


# -- reports ---------------------------------------------------------------

CLASSIFICATION_COLUMNS = [("Accuracy", "acc"), ("AUC", "auc"), ("F1", "f1_macro"), ("Precision", "precision_macro")]
SEGMENTATION_COLUMNS = [("MoF", "mof"), ("IoU", "iou")]


def format_table(title: str, rows: Sequence[tuple[str, dict]], columns: Sequence[tuple[str, str]]) -> str:
    """Plain-text table: one row per named run, one column per metric."""
    name_w = max([len("Method")] + [len(name) for name, _ in rows])
    header = "Method".ljust(name_w) + "".join(f"  {label:>9}" for label, _ in columns)
    lines = [title, header, "-" * len(header)]
    for name, metrics in rows:
        cells = []
        for _, key in columns:
            v = metrics.get(key)
            cells.append(f"  {v:9.4f}" if v is not None else f"  {'-':>9}")
        lines.append(name.ljust(name_w) + "".join(cells))
    return "\n".join(lines) + "\n"


def report(runs: dict, config: dict | None = None) -> tuple[str, dict]:
    """Render run outputs as text tables and a JSON-ready dict.

    ``runs`` may hold ``"classification"`` and ``"ablation"`` lists of
    (row name, metrics dict), and ``"segmentation"`` likewise.
    """
    parts = []
    doc: dict = {"config": config or {}}
    if runs.get("classification"):
        parts.append(format_table("SA prediction", runs["classification"], CLASSIFICATION_COLUMNS))
        doc["classification"] = {n: m for n, m in runs["classification"]}
    if runs.get("ablation"):
        parts.append(format_table("Feature ablation", runs["ablation"], CLASSIFICATION_COLUMNS))
        doc["ablation"] = {n: m for n, m in runs["ablation"]}
    if runs.get("segmentation"):
        parts.append(format_table("Temporal segmentation", runs["segmentation"], SEGMENTATION_COLUMNS))
        doc["segmentation"] = {n: m for n, m in runs["segmentation"]}
    for key in ("folds", "extra"):
        if key in runs:
            doc[key] = runs[key]
    return "\n".join(parts), doc


def write_report(out_dir, text: str, doc: dict) -> None:
    from pathlib import Path

    out = Path(out_dir)
    (out / "report.txt").write_text(text)
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
