"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest -v tests/test_acceptance.py``; the lines are repeated in the
terminal summary. Criterion 8 runs only when real feature exports are supplied
through ``SA_ASSESS_DANDSD`` (a directory holding frames.jsonl, ratings.csv
and events.csv).
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from sa_assess.cli import EXIT_OK, main
from sa_assess.evaluation import iou, mof
from sa_assess.graph import embed_batch, gcn_layer, train_autoencoder, video_node_attributes
from sa_assess.labels import accumulate_ternary, binarize, build_curve, video_labels
from sa_assess.labels import SaAnnotation
from sa_assess.model import SaModelConfig, evaluate_samples, fold_assignment, predict_curve, train, video_features
from sa_assess.numerics import Tensor
from sa_assess.pipeline import labeled_windows
from sa_assess.segmentation import match_segments, segment_trajectory
from sa_assess.synth import EventSpec, ScenarioScript, generate_scenario
from sa_assess.verify import gradient_suite, metric_suite

SEQ_LEN = 15
SEPARATION_MARGIN = 0.25  # rating units between a window's SA values and the 3.0 threshold


def scenario_scripts(n, seed):
    """Five events of 50-400 frames; perception always peaks high so every event shows an SA rise."""
    rng = np.random.default_rng(seed)
    scripts = []
    for v in range(n):
        events = [
            EventSpec(f"e{i}", int(rng.integers(50, 400)),
                      (5.0, float(rng.choice([1, 2, 4, 5])), float(rng.choice([1, 2, 4, 5]))))
            for i in range(5)
        ]
        total = sum(e.duration_frames for e in events)
        scripts.append(ScenarioScript(f"s{seed}_{v}", events, position_noise=2.0, rating_noise=0.0,
                                      seed=int(rng.integers(2**31)), n_clips=total // 30))
    return scripts


def class_separable(sample, labels):
    """Whole window in one class, with perception and comprehension clear of the threshold."""
    lab = labels[sample.video_id]
    w = slice(sample.start_frame, sample.end_frame + 1)
    one_class = len(set(lab.ternary[w].tolist())) == 1
    return one_class and float(np.min(np.abs(lab.curve[w][:, :2] - 3.0))) >= SEPARATION_MARGIN


@pytest.fixture(scope="module")
def world():
    """Train scenarios, held-out scenarios, the fitted autoencoder and SA model."""
    start = time.perf_counter()
    train_sc = [generate_scenario(s) for s in scenario_scripts(8, seed=1)]
    held_sc = [generate_scenario(s) for s in scenario_scripts(4, seed=2)]
    phi = np.concatenate([video_node_attributes(sc.frames) for sc in train_sc])
    gae, gae_history = train_autoencoder(phi, epochs=50, seed=0)

    def feats(scs):
        return {sc.script.video_id: video_features(sc.frames, embed_batch(gae, video_node_attributes(sc.frames)))
                for sc in scs}

    f_train, f_held = feats(train_sc), feats(held_sc)
    labels = {sc.script.video_id: sc.labels for sc in train_sc + held_sc}
    lab_train = {sc.script.video_id: sc.labels for sc in train_sc}
    lab_held = {sc.script.video_id: sc.labels for sc in held_sc}
    samples = [s for s in labeled_windows(f_train, lab_train, SEQ_LEN) if class_separable(s, labels)]
    held = [s for s in labeled_windows(f_held, lab_held, SEQ_LEN) if class_separable(s, labels)]
    cfg = SaModelConfig(seed=0)
    val_idx = set(fold_assignment(len(samples), 10, seed=0)[0].tolist())
    fit = [s for i, s in enumerate(samples) if i not in val_idx]
    result = train(fit, [samples[i] for i in sorted(val_idx)], cfg)
    elapsed = time.perf_counter() - start
    return dict(train_sc=train_sc, held_sc=held_sc, f_held=f_held, gae_history=gae_history,
                samples=samples, fit=fit, held=held, result=result, elapsed=elapsed)


def test_criterion_1_gradient_fidelity(acceptance):
    start = time.perf_counter()
    results = gradient_suite(seeds=range(10), full_size=True)
    elapsed = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    worst = max(r.max_rel_error for r in results)
    ok = not failed and worst < 1e-4 and elapsed < 60.0
    detail = f"{len(results)} checks x 10 seeds, worst rel err {worst:.2e}, {elapsed:.1f}s"
    assert acceptance(1, "gradient fidelity", ok, detail + (f", failed {failed}" if failed else ""))


def _dense_oracle(phi, a, w, act):
    n, d_in, d_out = phi.shape[0], phi.shape[1], w.shape[1]
    ap = [[sum(a[i][k] * phi[k][j] for k in range(n)) for j in range(d_in)] for i in range(n)]
    z = np.array([[sum(ap[i][k] * w[k][j] for k in range(d_in)) for j in range(d_out)] for i in range(n)])
    return np.maximum(z, 0.0) if act == "relu" else z


def test_criterion_2_gcn_layer_oracle(acceptance):
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(100):
        if i == 0:
            n, d_in, d_out = 4, 37, 16
        elif i == 1:
            n, d_in, d_out = 4, 16, 8
        else:
            n, d_in, d_out = (int(v) for v in rng.integers(1, 9, 3))
        phi, a, w = rng.normal(size=(n, d_in)), rng.normal(size=(n, n)), rng.normal(size=(d_in, d_out))
        for act in ("relu", "identity"):
            ours = gcn_layer(Tensor(phi), a, Tensor(w), act).data
            worst = max(worst, float(np.max(np.abs(ours - _dense_oracle(phi, a, w, act)))))
    # Chained exact shapes 4x37 -> 4x16 -> 4x8 with an all-ones adjacency.
    phi, a = rng.uniform(size=(4, 37)), np.ones((4, 4))
    w0, w1 = rng.normal(size=(37, 16)), rng.normal(size=(16, 8))
    h = gcn_layer(Tensor(phi), a, Tensor(w0), "relu")
    g = gcn_layer(h, a, Tensor(w1), "relu").data
    ref = _dense_oracle(_dense_oracle(phi, a, w0, "relu"), a, w1, "relu")
    worst = max(worst, float(np.max(np.abs(g - ref))))
    ok = worst <= 1e-10 and h.shape == (4, 16) and g.shape == (4, 8)
    assert acceptance(2, "GCN layer oracle", ok, f"100 instances + chained 4x37->4x16->4x8, max abs diff {worst:.1e}")


def test_criterion_3_label_pipeline(acceptance):
    checks = {
        "[0,1,1] -> class 0": accumulate_ternary([0, 1, 1])[1] == 0,
        "[1,1,1] -> top class": accumulate_ternary([1, 1, 1])[1] == 2,
        "3.0 -> high": int(binarize(3.0)) == 1,
        "2.999 -> low": int(binarize(2.999)) == 0,
        "midpoint": build_curve({1500: [1, 1, 1], 3000: [5, 5, 5]}, [], 4000)[2250].tolist() == [3.0, 3.0, 3.0],
    }
    anns = [SaAnnotation("v", c, r, 5, 5, 5) for c in range(10) for r in ("r1", "r2")]
    lab = video_labels(anns, {"v": [(0, "a"), (400, "b")]}, {"v": 1000})["v"]
    checks["boundary frames -> [0,0,0], class 0"] = all(
        lab.binary[b].tolist() == [0, 0, 0] and lab.ternary[b] == 0 for b in (0, 400)
    )
    failed = [k for k, v in checks.items() if not v]
    assert acceptance(3, "label pipeline fidelity", not failed, f"{len(checks)} worked examples"
                      + (f", failed {failed}" if failed else ""))


def test_criterion_4_metric_oracles(acceptance):
    results = metric_suite(n_instances=1000, seed=4)
    hand_mof = mof([0, 0, 1, 1], [0, 1, 1, 1]) == 0.75
    hand_iou = iou([1] * 10 + [-1] * 5, [-1] * 5 + [1] * 10, background=-1) == pytest.approx(1 / 3, abs=1e-15)
    ok = all(r.passed for r in results) and hand_mof and hand_iou
    detail = ", ".join(f"{r.name} {r.detail}" for r in results) + ", hand cases MoF 0.75 / IoU 1/3"
    assert acceptance(4, "metric oracles", ok, detail)


def test_criterion_5_trainability(world, acceptance):
    res = world["result"]
    train_acc = evaluate_samples(res.model, world["fit"])["acc"]
    held_acc = evaluate_samples(res.model, world["held"])["acc"]
    hist = world["gae_history"]
    gae_ratio = hist[-1] / hist[0]
    ok = (len(world["samples"]) >= 200 and train_acc >= 0.95 and held_acc >= 0.80
          and res.stopped_epoch <= 100 and world["elapsed"] < 600 and len(hist) == 50 and gae_ratio <= 0.5)
    detail = (f"{len(world['samples'])} seqs, train acc {train_acc:.3f}, held-out acc {held_acc:.3f} "
              f"({len(world['held'])} seqs), {res.stopped_epoch} epochs, GAE loss ratio {gae_ratio:.4f}, "
              f"{world['elapsed']:.0f}s")
    assert acceptance(5, "trainability", ok, detail)


def test_criterion_6_segmentation(world, acceptance):
    missed = spurious = 0
    for sc in world["train_sc"] + world["held_sc"]:
        _, seg = segment_trajectory(sc.labels.ternary.astype(float))
        truth = sc.truth.boundaries
        missed += sum(1 for b in truth if min(abs(b - p) for p in seg.boundaries) > 13)
        spurious += sum(1 for p in seg.boundaries if min(abs(b - p) for b in truth) > 13)
    mofs, ious = [], []
    for sc in world["held_sc"]:
        traj, _ = predict_curve(world["result"].model, world["f_held"][sc.script.video_id])
        _, seg = segment_trajectory(traj.astype(float))
        matched = match_segments(seg, sc.truth)
        mofs.append(mof(sc.truth.labels, matched))
        ious.append(iou(sc.truth.labels, matched))
    m, i = float(np.mean(mofs)), float(np.mean(ious))
    n_bounds = sum(len(sc.truth.boundaries) for sc in world["train_sc"] + world["held_sc"])
    ok = missed == 0 and spurious == 0 and m >= 0.8 and i >= 0.6
    detail = (f"oracle: {n_bounds} boundaries, missed {missed}, spurious {spurious}; "
              f"model on held-out scenarios: MoF {m:.3f}, IoU {i:.3f}")
    assert acceptance(6, "segmentation", ok, detail)


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_7_determinism(tmp_path, acceptance):
    common = ["--n-clips", "8"]
    small = ["--folds", "2", "--max-epochs", "3", "--gae-epochs", "3"]
    runs = []
    for k in range(2):
        base = tmp_path / f"run{k}"
        data, model, seg = base / "data", base / "model", base / "seg"
        assert main(["synth", "--out", str(data), "--n-videos", "2", "--min-seconds", "12",
                     "--max-seconds", "14", "--seed", "5", *common]) == EXIT_OK
        files = ["--frames", str(data / "frames.jsonl"), "--ratings", str(data / "ratings.csv"),
                 "--events", str(data / "events.csv")]
        assert main(["train", *files, "--out", str(model), "--seed", "5", *common, *small]) == EXIT_OK
        assert main(["segment", "--frames", files[1], "--events", files[5], "--model", str(model),
                     "--out", str(seg), *common]) == EXIT_OK
        # Input paths differ between the two runs, so compare artifacts with the run directory masked.
        runs.append({d: {k2: v.replace(str(base).encode(), b"RUN") for k2, v in _tree(base / d).items()}
                     for d in ("data", "model", "seg")})
    n_files = sum(len(v) for v in runs[0].values())
    diffs = [f"{d}/{name}" for d in runs[0] for name in runs[0][d] if runs[0][d][name] != runs[1][d].get(name)]
    assert acceptance(7, "determinism", not diffs and n_files > 10, f"{n_files} artifacts compared"
                      + (f", differing {diffs}" if diffs else ", all byte-identical"))


def test_criterion_8_real_data(tmp_path, acceptance):
    root = os.environ.get("SA_ASSESS_DANDSD")
    if not root:
        print("ACCEPTANCE 8 SKIP: real-data reproduction (set SA_ASSESS_DANDSD to run)", flush=True)
        pytest.skip("SA_ASSESS_DANDSD not set")
    root = Path(root)
    files = ["--frames", str(root / "frames.jsonl"), "--ratings", str(root / "ratings.csv"),
             "--events", str(root / "events.csv")]
    assert main(["train", *files, "--out", str(tmp_path / "train")]) == EXIT_OK
    assert main(["segment", "--frames", files[1], "--events", files[5], "--model", str(tmp_path / "train"),
                 "--out", str(tmp_path / "seg")]) == EXIT_OK
    assert main(["eval", str(tmp_path / "train"), str(tmp_path / "seg"), "--out", str(tmp_path / "eval")]) == EXIT_OK
    text = (tmp_path / "eval" / "report.txt").read_text()
    doc = json.loads((tmp_path / "eval" / "report.json").read_text())
    acc = next(iter(doc["classification"].values()))["acc"]
    seg_mof = doc["segmentation"]["TrSA"]["mof"]
    ok = "Accuracy" in text and "MoF" in text
    # Reference targets (accuracy 0.63, MoF 0.58, each +-0.05) are reported, not enforced.
    detail = (f"accuracy {acc:.3f} (target 0.63, within 0.05: {abs(acc - 0.63) <= 0.05}), "
              f"MoF {seg_mof:.3f} (target 0.58, within 0.05: {abs(seg_mof - 0.58) <= 0.05})")
    assert acceptance(8, "real-data report", ok, detail)
