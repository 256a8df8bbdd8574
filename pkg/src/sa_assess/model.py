"""Transformer SA classifier: features, model, training, cross-validation, inference."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import DEFAULT_FRAME_SIZE, SEQ_LEN, FrameFeatures, SequenceSample, balance_resample
from .errors import ConfigurationError, DimensionError, NonFiniteError, TrainingAborted
from .evaluation import classification_metrics
from .labels import accumulate_ternary
from .numerics import Adam, Linear, Module, Tensor, TransformerBlock, activation, loss, positional_encoding

logger = logging.getLogger(__name__)

FEATURE_ORDER = ("bbox", "pose", "graph")


def feature_dims(features: Sequence[str], g_dim: int = 8) -> int:
    sizes = {"bbox": 4, "pose": 34, "graph": 4 * g_dim}
    unknown = set(features) - set(sizes)
    if unknown or not features:
        raise ConfigurationError(f"feature set must be a non-empty subset of {FEATURE_ORDER}, got {features}")
    return sum(sizes[f] for f in features)


@dataclass
class SaModelConfig:
    seq_len: int = SEQ_LEN
    features: tuple[str, ...] = FEATURE_ORDER
    g_dim: int = 8
    proj_dim: int = 16
    ff_dim: int = 32
    layers: int = 2
    heads: int = 2
    dropout: float = 0.1
    head_kind: str = "ternary"
    lr: float = 1e-3
    max_epochs: int = 100
    patience: int = 5
    batch: int = 32
    folds: int = 10
    seed: int = 0
    residual: bool = True
    balance: str = "up"  # "up", "down" or "none"; training folds only
    input_dim: int | None = None

    def __post_init__(self):
        self.features = tuple(f for f in FEATURE_ORDER if f in self.features) or tuple(self.features)
        if self.input_dim is None:
            self.input_dim = feature_dims(self.features, self.g_dim)
        if self.head_kind not in ("binary", "ternary"):
            raise ConfigurationError(f"head_kind must be binary or ternary, got {self.head_kind!r}")
        for name in ("seq_len", "input_dim", "proj_dim", "ff_dim", "layers", "heads", "batch", "folds"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.proj_dim % self.heads:
            raise ConfigurationError(f"proj_dim {self.proj_dim} not divisible by heads {self.heads}")
        if self.proj_dim % 2:
            raise ConfigurationError("proj_dim must be even for the positional encoding")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.balance not in ("up", "down", "none"):
            raise ConfigurationError(f"balance must be up, down or none, got {self.balance!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = list(self.features)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SaModelConfig:
        d = dict(d)
        d["features"] = tuple(d.get("features", FEATURE_ORDER))
        return cls(**d)


# -- features ------------------------------------------------------------------

def concat_features(
    frame: FrameFeatures,
    embedding: np.ndarray | None,
    features: Sequence[str] = FEATURE_ORDER,
    frame_size=DEFAULT_FRAME_SIZE,
) -> np.ndarray:
    """Per-frame vector [bystander bbox (4) | bystander keypoints (34) | flattened G]."""
    width, height = frame_size
    by = frame.objects["bystander"]
    parts = []
    if "bbox" in features:
        x1, y1, x2, y2 = by.bbox
        parts.append(np.array([x1 / width, y1 / height, x2 / width, y2 / height]))
    if "pose" in features:
        kp = by.keypoints if by.keypoints is not None else np.zeros((17, 2))
        parts.append((kp / [width, height]).reshape(-1))
    if "graph" in features:
        if embedding is None:
            raise DimensionError("graph features requested without an embedding")
        parts.append(np.asarray(embedding, dtype=np.float64).reshape(-1))
    return np.concatenate(parts)


def video_features(frames: Sequence[FrameFeatures], embeddings: np.ndarray | None,
                   features: Sequence[str] = FEATURE_ORDER, frame_size=DEFAULT_FRAME_SIZE) -> np.ndarray:
    rows = [
        concat_features(f, None if embeddings is None else embeddings[i], features, frame_size)
        for i, f in enumerate(frames)
    ]
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise DimensionError(f"feature width drifts within video: {sorted(widths)}")
    return np.vstack(rows)


# -- model -----------------------------------------------------------------------

@dataclass
class SaPrediction:
    probs: np.ndarray  # (3,)
    head_kind: str

    @property
    def label(self):
        if self.head_kind == "binary":
            return (self.probs >= 0.5).astype(int)
        return hard_ternary(self.probs[None, :])[0]


def hard_ternary(probs: np.ndarray) -> np.ndarray:
    """Argmax per row; ties resolve to the lower class."""
    return np.argmax(probs, axis=-1)


def trajectory_labels(probs: np.ndarray, head_kind: str) -> np.ndarray:
    """Ternary class per row, from softmax rows or from three sigmoid outputs."""
    if head_kind == "ternary":
        return hard_ternary(probs)
    _, cls = accumulate_ternary((probs >= 0.5).astype(int))
    return np.asarray(cls)


class SaTransformer(Module):
    """linear(f -> 16) + positional encoding -> transformer blocks -> flatten -> linear(240 -> 3)."""

    def __init__(self, config: SaModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.proj = Linear(config.input_dim, config.proj_dim, rng)
        self.blocks = [
            TransformerBlock(config.proj_dim, config.ff_dim, config.heads, config.dropout, rng, config.residual)
            for _ in range(config.layers)
        ]
        self.head = Linear(config.seq_len * config.proj_dim, 3, rng)
        self._pe = positional_encoding(config.seq_len, config.proj_dim)
        # Per-feature standardization, fitted on training data and frozen with the weights.
        self.feature_mean = np.zeros(config.input_dim)
        self.feature_std = np.ones(config.input_dim)

    def fit_standardizer(self, x: np.ndarray) -> None:
        flat = np.asarray(x, dtype=np.float64).reshape(-1, self.config.input_dim)
        self.feature_mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        self.feature_std = np.where(std > 1e-8, std, 1.0)

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        out = self.state_dict()
        out["standardizer.mean"] = self.feature_mean.copy()
        out["standardizer.std"] = self.feature_std.copy()
        return out

    def load_checkpoint_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        arrays = dict(arrays)
        self.feature_mean = np.asarray(arrays.pop("standardizer.mean"), dtype=np.float64)
        self.feature_std = np.asarray(arrays.pop("standardizer.std"), dtype=np.float64)
        self.load_state_dict(arrays)

    def logits(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        c = self.config
        if x.ndim != 3 or x.shape[1] != c.seq_len or x.shape[2] != c.input_dim:
            raise DimensionError(f"expected input (b, {c.seq_len}, {c.input_dim}), got {x.shape}")
        x = (x - self.feature_mean) * (1.0 / self.feature_std)
        h = self.proj(x) + self._pe
        for block in self.blocks:
            h = block(h, training, rng)
        return self.head(h.reshape(x.shape[0], c.seq_len * c.proj_dim))

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Probabilities (b, 3): independent sigmoids for binary, a softmax row for ternary."""
        z = self.logits(x, training, rng)
        if self.config.head_kind == "binary":
            return activation("sigmoid", z)
        return activation("softmax", z, axis=-1)

    __call__ = forward

    def loss(self, x, targets, training: bool = False, rng=None) -> Tensor:
        kind = "bce" if self.config.head_kind == "binary" else "cce"
        return loss(kind, self.forward(x, training, rng), targets)

    def predict_proba(self, x: np.ndarray, chunk: int = 512) -> np.ndarray:
        out = [self.forward(x[i : i + chunk]).data for i in range(0, len(x), chunk)]
        return np.concatenate(out) if out else np.zeros((0, 3))


# -- training ----------------------------------------------------------------------

class EarlyStopping:
    """Stop once validation loss has not improved for ``patience`` consecutive epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.since_best = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record ``val_loss`` for 1-based ``epoch``; True if training should stop."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.since_best = val_loss, epoch, 0
            return False
        self.since_best += 1
        return self.since_best >= self.patience


@dataclass
class TrainResult:
    model: SaTransformer
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def stack_samples(samples: Sequence[SequenceSample], head_kind: str) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.features for s in samples]).astype(np.float64)
    if head_kind == "binary":
        y = np.stack([np.asarray(s.target_binary, dtype=np.float64) for s in samples])
    else:
        y = np.asarray([s.target_ternary for s in samples], dtype=np.int64)
    return x, y


def _balanced(samples, config: SaModelConfig, seed: int):
    if config.balance == "none" or not samples:
        return list(samples)
    return balance_resample(samples, lambda s: int(s.target_ternary), seed, mode=config.balance)


def train(
    train_samples: Sequence[SequenceSample],
    val_samples: Sequence[SequenceSample],
    config: SaModelConfig,
    model: SaTransformer | None = None,
) -> TrainResult:
    """Adam on shuffled mini-batches with early stopping on validation loss.

    Returns the weights from the epoch with the lowest validation loss. With
    no validation samples, training runs for ``max_epochs`` and keeps the last
    weights.
    """
    model = model or SaTransformer(config)
    result = TrainResult(model)
    if config.max_epochs == 0 or not train_samples:
        return result
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    train_samples = _balanced(train_samples, config, int(seeds[0].generate_state(1)[0]))
    x, y = stack_samples(train_samples, config.head_kind)
    model.fit_standardizer(x)
    xv, yv = stack_samples(val_samples, config.head_kind) if val_samples else (None, None)
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    stopper = EarlyStopping(config.patience)
    best_state = model.state_dict()

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch):
            idx = order[start : start + config.batch]
            opt.zero_grad()
            try:
                out = model.loss(x[idx], y[idx], training=True, rng=dropout_rng)
                out.backward()
                opt.step()
            except NonFiniteError as exc:
                raise TrainingAborted(f"SA model diverged at epoch {epoch}: {exc}") from None
            total += out.item() * len(idx)
        result.train_loss.append(total / len(x))
        result.stopped_epoch = epoch
        if xv is None:
            continue
        val = evaluate_loss(model, xv, yv)
        if not np.isfinite(val):
            raise TrainingAborted(f"non-finite validation loss at epoch {epoch}")
        result.val_loss.append(val)
        stop = stopper.update(epoch, val)
        if stopper.best_epoch == epoch:
            best_state = model.state_dict()
        logger.debug("epoch %d train %.4f val %.4f", epoch, result.train_loss[-1], val)
        if stop:
            break
    if xv is not None:
        model.load_state_dict(best_state)
        result.best_epoch = stopper.best_epoch
    else:
        result.best_epoch = result.stopped_epoch
    return result


def evaluate_loss(model: SaTransformer, x: np.ndarray, y: np.ndarray, chunk: int = 512) -> float:
    total = 0.0
    for i in range(0, len(x), chunk):
        total += model.loss(x[i : i + chunk], y[i : i + chunk]).item() * len(x[i : i + chunk])
    return total / len(x)


def evaluate_samples(model: SaTransformer, samples: Sequence[SequenceSample]) -> dict:
    """Classification metrics on ``samples``; binary heads report the mean over the three SA levels."""
    x, y = stack_samples(samples, model.config.head_kind)
    probs = model.predict_proba(x)
    if model.config.head_kind == "ternary":
        pred = hard_ternary(probs)
        return _safe_metrics(y, pred, probs, classes=[0, 1, 2])
    per_dim = {}
    for d, name in enumerate(("per", "com", "pro")):
        truth = y[:, d].astype(int)
        pred = (probs[:, d] >= 0.5).astype(int)
        scores = probs[:, d] if len(set(truth.tolist())) == 2 else None
        per_dim[name] = _safe_metrics(truth, pred, scores, classes=[0, 1])
    keys = ("acc", "bacc", "f1_macro", "precision_macro", "auc")
    out = {}
    for k in keys:
        vals = [m[k] for m in per_dim.values() if m.get(k) is not None]
        if vals:
            out[k] = float(np.mean(vals))
    out["per_dimension"] = per_dim
    return out


def _safe_metrics(truth, pred, scores, classes) -> dict:
    if scores is not None and np.ndim(scores) == 1:
        rep = classification_metrics(truth, pred, None, classes)
        try:
            from .evaluation import binary_auc

            rep.auc = binary_auc(np.asarray(truth) == classes[1], scores)
        except ValueError:
            rep.auc = None
    else:
        rep = classification_metrics(truth, pred, scores, classes)
    return rep.to_dict()


# -- cross-validation ---------------------------------------------------------------

def fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded partition of range(n) into ``folds`` disjoint, near-equal index sets."""
    if folds > n:
        raise ValueError(f"cannot make {folds} folds from {n} samples")
    if folds < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


@dataclass
class CvResult:
    folds: list[dict]
    mean: dict
    std: dict
    assignment: list[list[int]]


def cross_validate(samples: Sequence[SequenceSample], config: SaModelConfig, threads: int = 1) -> CvResult:
    """Each fold serves once as validation (and early-stopping) set."""
    parts = fold_assignment(len(samples), config.folds, config.seed)
    sub_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(config.folds)]

    def run(k: int) -> dict:
        val_idx = set(parts[k].tolist())
        tr = [s for i, s in enumerate(samples) if i not in val_idx]
        va = [samples[i] for i in parts[k]]
        cfg = SaModelConfig.from_dict({**config.to_dict(), "seed": sub_seeds[k]})
        res = train(tr, va, cfg)
        metrics = evaluate_samples(res.model, va)
        metrics.update(fold=k, best_epoch=res.best_epoch, stopped_epoch=res.stopped_epoch,
                       n_train=len(tr), n_val=len(va))
        return metrics

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(config.folds)))
    else:
        results = [run(k) for k in range(config.folds)]
    keys = [k for k in ("acc", "bacc", "f1_macro", "precision_macro", "auc") if all(k in r for r in results)]
    mean = {k: float(np.mean([r[k] for r in results])) for k in keys}
    std = {k: float(np.std([r[k] for r in results])) for k in keys}
    return CvResult(results, mean, std, [p.tolist() for p in parts])


# -- inference -------------------------------------------------------------------------

def predict_curve(model: SaTransformer, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 predictions over a video's (n, f) feature matrix.

    Frame t >= seq_len - 1 carries the prediction of the window ending at t;
    earlier frames repeat the first window's. Returns (ternary labels (n,),
    probabilities (n, 3)).
    """
    l = model.config.seq_len
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[0] < l:
        raise ValueError(f"video has {feats.shape[0]} frames, fewer than the {l}-frame window")
    windows = np.lib.stride_tricks.sliding_window_view(feats, l, axis=0).transpose(0, 2, 1)
    probs = model.predict_proba(np.ascontiguousarray(windows))
    probs = np.concatenate([np.repeat(probs[:1], l - 1, axis=0), probs])
    return trajectory_labels(probs, model.config.head_kind), probs
