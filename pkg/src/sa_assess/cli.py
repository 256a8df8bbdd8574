"""``sa-assess`` command line: synth, train, segment, eval, verify.

Settings resolve as command-line flags over the key=value file named by
``SA_ASSESS_CONFIG`` over built-in defaults. Exit codes: 0 success,
1 verification failure, 2 input error, 3 training abort.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigurationError, DimensionError, TrainingAborted, ValidationError
from .model import FEATURE_ORDER
from .pipeline import RunConfig, run_eval, run_segment, run_synth, run_train

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_ABORT = 0, 1, 2, 3
CONFIG_ENV = "SA_ASSESS_CONFIG"

logger = logging.getLogger("sa_assess")


def _float_pair(value) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(v) for v in str(value).replace("x", ",").split(","))


def _features(value) -> tuple[str, ...]:
    items = value if isinstance(value, (list, tuple)) else str(value).replace(",", " ").split()
    bad = [f for f in items if f not in FEATURE_ORDER]
    if bad or not items:
        raise ConfigurationError(f"features must be drawn from {', '.join(FEATURE_ORDER)}, got {items}")
    return tuple(items)


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {value!r}")


# Settings shared by flags and the config file: name -> (parser, default).
SETTINGS = {
    "seed": (int, 0),
    "threads": (int, 1),
    "precision": (str, "float64"),
    "features": (_features, FEATURE_ORDER),
    "head": (str, "ternary"),
    "folds": (int, 10),
    "g_dim": (int, 8),
    "max_epochs": (int, 100),
    "patience": (int, 5),
    "lr": (float, 1e-3),
    "batch": (int, 32),
    "dropout": (float, 0.1),
    "balance": (str, "up"),
    "residual": (_bool, True),
    "gae_epochs": (int, 50),
    "gae_lr": (float, 1e-3),
    "window": (int, 13),
    "sigma": (float, None),
    "tau": (float, 0.5),
    "min_gap": (int, 13),
    "n_clips": (int, 10),
    "frame_size": (_float_pair, (1920.0, 1080.0)),
    "n_videos": (int, 11),
    "min_seconds": (float, 120.0),
    "max_seconds": (float, 180.0),
    "position_noise": (float, 2.0),
    "rating_noise": (float, 0.3),
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys may use - or _."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise ConfigurationError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = value
    return out


def resolve_settings(flags: dict, file_values: dict) -> dict:
    """Flags over config file over defaults, each value parsed by its setting's type."""
    out = {}
    for key, (parse, default) in SETTINGS.items():
        if flags.get(key) is not None:
            raw = flags[key]
        elif key in file_values:
            raw = file_values[key]
        else:
            out[key] = default
            continue
        try:
            out[key] = parse(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for {key}: {raw!r} ({exc})") from None
    return out


def build_run_config(subcommand: str, settings: dict, inputs: dict, out: str, oracle: bool = False) -> RunConfig:
    if settings["precision"] != "float64":
        raise ConfigurationError("only float64 precision is supported")
    if settings["threads"] < 1:
        raise ConfigurationError("threads must be >= 1")
    model = {
        "features": list(settings["features"]),
        "head_kind": settings["head"],
        "folds": settings["folds"],
        "g_dim": settings["g_dim"],
        "max_epochs": settings["max_epochs"],
        "patience": settings["patience"],
        "lr": settings["lr"],
        "batch": settings["batch"],
        "dropout": settings["dropout"],
        "balance": settings["balance"],
        "residual": settings["residual"],
    }
    smoothing = {"window": settings["window"], "sigma": settings["sigma"], "tau": settings["tau"],
                 "min_gap": settings["min_gap"]}
    if len(settings["frame_size"]) != 2:
        raise ConfigurationError("frame_size needs width,height")
    synth = {k: settings[k] for k in ("n_videos", "min_seconds", "max_seconds", "position_noise", "rating_noise")}
    rc = RunConfig(
        subcommand=subcommand, inputs=inputs, out=out, seed=settings["seed"], threads=settings["threads"],
        precision=settings["precision"], model=model, smoothing=smoothing, gae_epochs=settings["gae_epochs"],
        gae_lr=settings["gae_lr"], n_clips=settings["n_clips"], frame_size=tuple(settings["frame_size"]),
        oracle=oracle, synth=synth if subcommand == "synth" else {},
    )
    # Validate eagerly so bad settings are input errors, not crashes mid-run.
    rc.model_config()
    rc.smoothing_config()
    return rc


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="RNG seed (default 0)")
    p.add_argument("--threads", type=int, help="parallel folds (default 1)")
    p.add_argument("--precision", choices=["float64"], help="numeric precision")
    p.add_argument("--n-clips", dest="n_clips", type=int, help="clips per video in the ratings (default 10)")
    p.add_argument("--frame-size", dest="frame_size", help="frame WIDTH,HEIGHT in pixels (default 1920,1080)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", nargs="+", choices=FEATURE_ORDER, help="feature groups (default all)")
    p.add_argument("--head", choices=["binary", "ternary"], help="classification head (default ternary)")
    p.add_argument("--folds", type=int, help="cross-validation folds; below 2 skips CV (default 10)")
    p.add_argument("--g-dim", dest="g_dim", type=int, help="graph embedding width g (default 8)")
    p.add_argument("--max-epochs", dest="max_epochs", type=int, help="SA model epoch cap (default 100)")
    p.add_argument("--patience", type=int, help="early-stopping patience (default 5)")
    p.add_argument("--lr", type=float, help="SA model learning rate (default 1e-3)")
    p.add_argument("--batch", type=int, help="mini-batch size (default 32)")
    p.add_argument("--dropout", type=float, help="dropout rate (default 0.1)")
    p.add_argument("--balance", choices=["up", "down", "none"], help="training-fold class balancing (default up)")
    p.add_argument("--gae-epochs", dest="gae_epochs", type=int, help="autoencoder epochs (default 50)")
    p.add_argument("--gae-lr", dest="gae_lr", type=float, help="autoencoder learning rate (default 1e-3)")


def _add_smoothing(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, help="Gaussian window in frames, odd (default 13)")
    p.add_argument("--sigma", type=float, help="Gaussian sigma in frames (default window/6)")
    p.add_argument("--tau", type=float, help="reset threshold on the smoothed trajectory (default 0.5)")
    p.add_argument("--min-gap", dest="min_gap", type=int, help="minimum frames between boundaries (default 13)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sa-assess", description="Bystander situational-awareness assessment.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--script", help="JSON scenario script (default: 11 built-in videos)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-videos", dest="n_videos", type=int, help="videos in the built-in script (default 11)")
    p.add_argument("--min-seconds", dest="min_seconds", type=float, help="shortest built-in video (default 120)")
    p.add_argument("--max-seconds", dest="max_seconds", type=float, help="longest built-in video (default 180)")
    p.add_argument("--position-noise", dest="position_noise", type=float, help="pixel noise (default 2)")
    p.add_argument("--rating-noise", dest="rating_noise", type=float, help="rating noise (default 0.3)")
    _add_common(p)

    p = sub.add_parser("train", help="train the graph autoencoder and SA model")
    p.add_argument("--frames", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    _add_model(p)

    p = sub.add_parser("segment", help="segment videos from predicted (or true) SA trajectories")
    p.add_argument("--frames", required=True)
    p.add_argument("--events", help="ground-truth events for MoF/IoU")
    p.add_argument("--ratings", help="ratings (needed by --oracle)")
    p.add_argument("--model", help="directory holding the train checkpoints")
    p.add_argument("--oracle", action="store_true", help="use ground-truth ternary labels instead of the model")
    p.add_argument("--out", required=True)
    _add_common(p)
    _add_smoothing(p)

    p = sub.add_parser("eval", help="combine train/segment reports into result tables")
    p.add_argument("runs", nargs="+", help="run directories holding report.json")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("verify", help="run gradient checks and metric oracles")
    p.add_argument("--quick", action="store_true", help="skip the full-size model checks")
    _add_common(p)
    return parser


def _flag_values(args: argparse.Namespace) -> dict:
    flags = {k: getattr(args, k, None) for k in SETTINGS}
    if flags.get("features") is not None:
        flags["features"] = tuple(flags["features"])
    return flags


def _cmd_verify(args) -> int:
    from .verify import run_all

    failed = []
    for result in run_all(full_size=not args.quick):
        print(result.line(), flush=True)
        if not result.passed:
            failed.append(result.name)
    if failed:
        print(f"verification failed: {', '.join(failed)}")
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify":
        return _cmd_verify(args)
    try:
        env = os.environ.get(CONFIG_ENV)
        file_values = read_config_file(env) if env else {}
        settings = resolve_settings(_flag_values(args), file_values)
        inputs = {k: getattr(args, k) for k in ("script", "frames", "ratings", "events", "model", "runs")
                  if getattr(args, k, None) is not None}
        config = build_run_config(args.command, settings, inputs, args.out, getattr(args, "oracle", False))
        if args.command == "synth":
            summary = run_synth(config, args.script)
            print(f"wrote {summary['frames']} frames from {summary['videos']} videos to {args.out}")
        elif args.command == "train":
            run_train(config, args.frames, args.ratings, args.events)
            print((Path(args.out) / "report.txt").read_text(), end="")
        elif args.command == "segment":
            run_segment(config, args.frames, args.events, args.ratings, args.model)
            print((Path(args.out) / "report.txt").read_text(), end="")
        elif args.command == "eval":
            run_eval(config, args.runs)
            print((Path(args.out) / "report.txt").read_text(), end="")
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ValidationError, ConfigurationError, DimensionError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
