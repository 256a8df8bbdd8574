"""End-to-end runs: synthesize, train, segment and evaluate, writing all artifacts.

Every artifact is a pure function of the inputs and the effective config, so
re-running with the same seed reproduces the output directory byte for byte.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DEFAULT_FRAME_SIZE,
    FrameFeatures,
    SequenceSample,
    group_by_video,
    load_events,
    load_frames,
    window_sequences,
    write_events,
    write_frames,
)
from .errors import ValidationError
from .evaluation import balanced_mof, iou, mof, report, write_report
from .graph import GcnAutoencoder, embed_batch, train_autoencoder, video_node_attributes
from .labels import N_CLIPS, FrameLabels, load_ratings, video_labels, write_labels, write_ratings
from .model import (
    SaModelConfig,
    SaTransformer,
    cross_validate,
    evaluate_samples,
    fold_assignment,
    predict_curve,
    train,
    video_features,
)
from .numerics import load_checkpoint, save_checkpoint
from .segmentation import (
    Segmentation,
    SmoothingConfig,
    match_segments,
    segment_trajectory,
    write_curve,
    write_segments,
)
from .synth import default_script, generate_scenario, load_script

logger = logging.getLogger(__name__)

GAE_CHECKPOINT = "gae.ckpt.json"
SA_CHECKPOINT = "sa_model.ckpt.json"


@dataclass
class RunConfig:
    """Effective settings of one CLI run, echoed into its outputs."""

    subcommand: str = ""
    inputs: dict = field(default_factory=dict)
    out: str = ""
    seed: int = 0
    threads: int = 1
    precision: str = "float64"
    model: dict = field(default_factory=dict)  # SaModelConfig fields
    smoothing: dict = field(default_factory=dict)  # SmoothingConfig fields
    gae_epochs: int = 50
    gae_lr: float = 1e-3
    n_clips: int = N_CLIPS
    frame_size: tuple[float, float] = DEFAULT_FRAME_SIZE
    oracle: bool = False
    synth: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        # The output directory is left out so artifacts do not depend on where they were written.
        d = asdict(self)
        del d["out"]
        d["frame_size"] = list(self.frame_size)
        return d

    def model_config(self) -> SaModelConfig:
        return SaModelConfig.from_dict({**self.model, "seed": self.seed})

    def smoothing_config(self) -> SmoothingConfig:
        return SmoothingConfig(**self.smoothing)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_run_config(out: Path, config: RunConfig) -> None:
    _write_json(out / "run_config.json", config.to_dict())


# -- synth -------------------------------------------------------------------

def run_synth(config: RunConfig, script_path=None) -> dict:
    """Render scenarios into frames.jsonl, ratings.csv and events.csv."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    if script_path:
        scripts = load_script(script_path)
    else:
        scripts = default_script(seed=config.seed, n_clips=config.n_clips, **config.synth)
    frames, annotations, events = [], [], {}
    for script in scripts:
        script.frame_size = tuple(config.frame_size)
        sc = generate_scenario(script)
        frames.extend(sc.frames)
        annotations.extend(sc.annotations)
        events[script.video_id] = sc.events
    write_frames(out / "frames.jsonl", frames)
    write_ratings(out / "ratings.csv", annotations)
    write_events(out / "events.csv", events)
    _write_json(out / "script.json", {"videos": [s.to_dict() for s in scripts]})
    _write_run_config(out, config)
    return {"videos": len(scripts), "frames": len(frames), "ratings": len(annotations)}


# -- dataset -----------------------------------------------------------------

@dataclass
class Dataset:
    videos: dict[str, list[FrameFeatures]]
    events: dict[str, list[tuple[int, str]]]
    labels: dict[str, FrameLabels]

    def frame_ids(self) -> dict[str, list[int]]:
        return {vid: [f.frame_idx for f in frames] for vid, frames in self.videos.items()}


def load_dataset(frames_path, events_path=None, ratings_path=None, n_clips: int = N_CLIPS) -> Dataset:
    """Load inputs and derive per-frame labels; rows index frames by position within a video."""
    videos = group_by_video(load_frames(frames_path))
    events = load_events(events_path) if events_path else {}
    for vid in events:
        if vid not in videos:
            raise ValidationError(f"events reference unknown video {vid!r}")
    labels = {}
    if ratings_path:
        lengths = {vid: len(frames) for vid, frames in videos.items()}
        position_events = {}
        for vid, evs in events.items():
            index = {f.frame_idx: i for i, f in enumerate(videos[vid])}
            try:
                position_events[vid] = [(index[b], name) for b, name in evs]
            except KeyError as exc:
                raise ValidationError(f"video {vid}: boundary frame {exc.args[0]} not in frames") from None
        labels = video_labels(load_ratings(ratings_path), position_events, lengths, n_clips)
        missing = sorted(set(videos) - set(labels))
        if missing:
            logger.warning("no ratings for videos %s; they are left out of training", ", ".join(missing))
    return Dataset(videos, events, labels)


def graph_attributes(dataset: Dataset, frame_size) -> dict[str, np.ndarray]:
    return {vid: video_node_attributes(frames, frame_size) for vid, frames in dataset.videos.items()}


def feature_matrices(dataset: Dataset, gae: GcnAutoencoder | None, config: SaModelConfig, frame_size,
                     phi: dict[str, np.ndarray] | None = None) -> tuple[dict, dict]:
    """Per-video (n, f_total) feature matrices and flattened embeddings (empty without graph features)."""
    feats, embeds = {}, {}
    for vid, frames in dataset.videos.items():
        emb = None
        if "graph" in config.features:
            attrs = phi[vid] if phi is not None else video_node_attributes(frames, frame_size)
            emb = embed_batch(gae, attrs)
            embeds[vid] = emb
        feats[vid] = video_features(frames, emb, config.features, frame_size)
    return feats, embeds


def labeled_windows(feats: dict[str, np.ndarray], labels: dict[str, FrameLabels], seq_len: int) -> list[SequenceSample]:
    """Non-overlapping windows targeted with their last frame's labels."""
    samples = window_sequences({vid: feats[vid] for vid in sorted(labels)}, seq_len, seq_len)
    for s in samples:
        lab = labels[s.video_id]
        s.target_binary = lab.binary[s.end_frame].astype(np.int64)
        s.target_ternary = int(lab.ternary[s.end_frame])
    return samples


# -- train -------------------------------------------------------------------

def _feature_label(features) -> str:
    return " + ".join(f.capitalize() for f in features)


def run_train(config: RunConfig, frames_path, ratings_path, events_path) -> dict:
    """GAE, then frozen embeddings, then cross-validated and final SA models."""
    out = Path(config.out)
    (out / "folds").mkdir(parents=True, exist_ok=True)
    mcfg = config.model_config()
    dataset = load_dataset(frames_path, events_path, ratings_path, config.n_clips)
    if not dataset.labels:
        raise ValidationError("no video has both frames and ratings")
    frame_size = tuple(config.frame_size)
    provenance = config.to_dict()

    gae, gae_history, phi = None, [], None
    if "graph" in mcfg.features:
        phi = graph_attributes(dataset, frame_size)
        stacked = np.concatenate([phi[vid] for vid in sorted(phi)])
        gae, gae_history = train_autoencoder(
            stacked, epochs=config.gae_epochs, lr=config.gae_lr, seed=config.seed, embed_dim=mcfg.g_dim
        )
        save_checkpoint(out / GAE_CHECKPOINT, gae.state_dict(), {**gae.hyperparameters(), "run": provenance}, "gcn_autoencoder")
    feats, embeds = feature_matrices(dataset, gae, mcfg, frame_size, phi)
    ids = dataset.frame_ids()
    if embeds:
        with open(out / "embeddings.jsonl", "w") as fh:
            for vid in sorted(embeds):
                for i, row in enumerate(embeds[vid]):
                    rec = {"video_id": vid, "frame_idx": ids[vid][i], "g": [float(v) for v in row]}
                    fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    write_labels(out / "labels.jsonl", {v: dataset.labels[v] for v in sorted(dataset.labels)}, ids)

    samples = labeled_windows(feats, dataset.labels, mcfg.seq_len)
    if len(samples) < 2:
        raise ValidationError(f"only {len(samples)} labeled sequences; need at least 2")
    logger.info("%d sequences from %d videos", len(samples), len(dataset.labels))

    folds_doc = []
    cv = None
    if mcfg.folds >= 2:
        if mcfg.folds > len(samples):
            raise ValidationError(f"{mcfg.folds} folds requested but only {len(samples)} sequences")
        cv = cross_validate(samples, mcfg, threads=config.threads)
        for k, fold in enumerate(cv.folds):
            doc = {"config": provenance, "fold": k, "metrics": fold, "val_indices": cv.assignment[k]}
            _write_json(out / "folds" / f"fold_{k}.json", doc)
            folds_doc.append(fold)

    # Final model: the first fold's partition serves as the early-stopping set.
    val_part = set(fold_assignment(len(samples), max(mcfg.folds, 2), mcfg.seed)[0].tolist())
    tr = [s for i, s in enumerate(samples) if i not in val_part]
    va = [samples[i] for i in sorted(val_part)]
    result = train(tr, va, mcfg)
    model = result.model
    save_checkpoint(out / SA_CHECKPOINT, model.checkpoint_arrays(), {**mcfg.to_dict(), "run": provenance}, "sa_transformer")
    _write_json(out / "history.json", {
        "gae_loss": gae_history, "train_loss": result.train_loss, "val_loss": result.val_loss,
        "best_epoch": result.best_epoch, "stopped_epoch": result.stopped_epoch,
    })

    with open(out / "predictions.jsonl", "w") as fh:
        for vid in sorted(feats):
            if feats[vid].shape[0] < mcfg.seq_len:
                logger.warning("video %s shorter than %d frames; no predictions", vid, mcfg.seq_len)
                continue
            cls, probs = predict_curve(model, feats[vid])
            for i in range(len(cls)):
                rec = {"video_id": vid, "frame_idx": ids[vid][i], "cls": int(cls[i]),
                       "probs": [float(p) for p in probs[i]]}
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    row_name = f"TrSA-{mcfg.head_kind} [{_feature_label(mcfg.features)}]"
    metrics = cv.mean if cv is not None else evaluate_samples(model, va)
    runs = {
        "classification": [(row_name, {k: metrics.get(k) for k in ("acc", "bacc", "f1_macro", "precision_macro", "auc")})],
        "folds": folds_doc,
        "extra": {
            "cv_std": cv.std if cv is not None else None,
            "n_sequences": len(samples),
            "features": list(mcfg.features),
            "head_kind": mcfg.head_kind,
            "final_model": {"best_epoch": result.best_epoch, "stopped_epoch": result.stopped_epoch,
                            "holdout": evaluate_samples(model, va)},
        },
    }
    text, doc = report(runs, provenance)
    write_report(out, text, doc)
    _write_run_config(out, config)
    return doc


# -- segment -----------------------------------------------------------------

def load_models(model_dir) -> tuple[SaTransformer, GcnAutoencoder | None]:
    model_dir = Path(model_dir)
    arrays, hyper, kind = load_checkpoint(model_dir / SA_CHECKPOINT)
    if kind != "sa_transformer":
        raise ValidationError(f"{model_dir / SA_CHECKPOINT} holds a {kind!r} checkpoint")
    hyper = {k: v for k, v in hyper.items() if k != "run"}
    model = SaTransformer(SaModelConfig.from_dict(hyper))
    model.load_checkpoint_arrays(arrays)
    gae = None
    if "graph" in model.config.features:
        g_arrays, g_hyper, _ = load_checkpoint(model_dir / GAE_CHECKPOINT)
        g_hyper = {k: v for k, v in g_hyper.items() if k != "run"}
        gae = GcnAutoencoder(**g_hyper)
        gae.load_state_dict(g_arrays)
    return model, gae


def run_segment(config: RunConfig, frames_path, events_path=None, ratings_path=None, model_dir=None) -> dict:
    """Trajectory (model prediction, or ground-truth labels in oracle mode) -> boundaries -> MoF/IoU."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    smoothing = config.smoothing_config()
    dataset = load_dataset(frames_path, events_path, ratings_path, config.n_clips)
    ids = dataset.frame_ids()

    if config.oracle:
        if not dataset.labels:
            raise ValidationError("oracle mode needs ratings and events to build ground-truth labels")
        trajectories = {vid: lab.ternary.astype(np.float64) for vid, lab in dataset.labels.items()}
    else:
        if model_dir is None:
            raise ValidationError("segment needs --model DIR unless --oracle is given")
        model, gae = load_models(model_dir)
        seq_len = model.config.seq_len
        short = sorted(vid for vid, frames in dataset.videos.items() if len(frames) < seq_len)
        for vid in short:
            logger.warning("skipping video %s: %d frames is shorter than the %d-frame window",
                           vid, len(dataset.videos[vid]), seq_len)
        kept = Dataset({v: f for v, f in dataset.videos.items() if v not in short}, dataset.events, dataset.labels)
        feats, _ = feature_matrices(kept, gae, model.config, tuple(config.frame_size))
        trajectories = {vid: predict_curve(model, feats[vid])[0].astype(np.float64) for vid in sorted(feats)}

    seg_rows, curves, metric_rows, per_video = [], [], [], {}
    for vid in sorted(trajectories):
        traj = trajectories[vid]
        if len(traj) < smoothing.window:
            logger.warning("skipping video %s: shorter than the %d-frame smoothing window", vid, smoothing.window)
            continue
        smoothed, pred = segment_trajectory(traj, smoothing, vid)
        curves.append((vid, ids[vid], traj, smoothed))
        matched, classes = None, []
        if vid in dataset.events:
            index = {f: i for i, f in enumerate(ids[vid])}
            evs = dataset.events[vid]
            truth = Segmentation.from_boundaries(vid, [index[b] for b, _ in evs], len(traj), [n for _, n in evs])
            if truth.boundaries[0] != 0:
                raise ValidationError(f"video {vid}: first event must start at the first frame")
            matched, classes = match_segments(pred, truth), truth.classes
            per_video[vid] = {
                "mof": mof(truth.labels, matched),
                "iou": iou(truth.labels, matched),
                "balanced_mof": balanced_mof(truth.labels, matched, seed=config.seed),
                "predicted_boundaries": [ids[vid][b] for b in pred.boundaries],
                "true_boundaries": [b for b, _ in evs],
            }
            metric_rows.append((vid, per_video[vid]))
        pred.boundaries = [ids[vid][b] for b in pred.boundaries]
        seg_rows.append((pred, None if matched is None else _relabel(matched, ids[vid]), classes))

    write_segments(out / "segments.csv", [(s, m, c) for s, m, c in seg_rows])
    write_curve(out / "curve.tsv", curves)
    method = "Oracle" if config.oracle else "TrSA"
    runs: dict = {"extra": {"per_video": per_video, "smoothing": asdict(smoothing)}}
    if per_video:
        mean = {k: float(np.mean([m[k] for m in per_video.values()])) for k in ("mof", "iou", "balanced_mof")}
        runs["segmentation"] = [(method, mean)] + [(f"  {vid}", m) for vid, m in metric_rows]
    text, doc = report(runs, config.to_dict())
    write_report(out, text, doc)
    _write_run_config(out, config)
    return doc


def _relabel(matched: np.ndarray, frame_ids: list[int]) -> dict[int, int]:
    """Matched class per original frame index, for boundary lookup in write_segments."""
    return {fid: int(matched[i]) for i, fid in enumerate(frame_ids)}


# -- eval --------------------------------------------------------------------

def run_eval(config: RunConfig, run_dirs) -> dict:
    """Collect report.json files from train/segment runs into one set of tables."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    classification, segmentation = [], []
    sources = []
    for d in run_dirs:
        path = Path(d) / "report.json"
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read {path}: {exc}") from None
        sources.append(str(d))
        classification.extend(doc.get("classification", {}).items())
        segmentation.extend((n, m) for n, m in doc.get("segmentation", {}).items() if not n.startswith(" "))
    runs: dict = {"extra": {"sources": sources}}
    if len(classification) > 1:
        runs["ablation"] = classification
    elif classification:
        runs["classification"] = classification
    if segmentation:
        runs["segmentation"] = segmentation
    text, doc = report(runs, config.to_dict())
    write_report(out, text, doc)
    _write_run_config(out, config)
    return doc
