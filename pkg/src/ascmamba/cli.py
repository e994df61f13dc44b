"""``ascmamba`` command-line entry point.

Exit codes: 0 success, 1 partial or data failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .data import SCENES, ManifestError, read_manifest, write_manifest
from .evalkit import (DEFAULT_UNSEEN, PerturbConfig, SplitConfig, accuracy, class_report,
                      macro_accuracy, perturb, reference_stats, split_validation)
from .feature_cache import extract_many
from .features import FeatureConfig, feature_stats, standardize
from .semisup import PipelineError, model_from_checkpoint, predict_posteriors, run_pipeline

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("ascmamba")


def _feature_config(args) -> FeatureConfig:
    if getattr(args, "config", None):
        return load_config(args.config).features
    return FeatureConfig()


def cmd_features(args) -> int:
    records = read_manifest(args.manifest)
    feats, failures, computed = extract_many(records, args.audio_root, _feature_config(args), args.out)
    print(f"{len(feats)} cached ({computed} computed, {len(feats) - computed} reused), "
          f"{len(failures)} failed")
    for name, err in sorted(failures.items()):
        print(f"FAILED {name}: {err}", file=sys.stderr)
    return EXIT_DATA if failures else EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg.validate_paths()
    try:
        reports = run_pipeline(cfg, args.from_stage, args.to_stage)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if "missing" in str(exc) else EXIT_DATA
    for stage, rep in reports.items():
        valid = rep.get("valid")
        extra = f" valid_acc={valid['accuracy']:.4f}" if valid else ""
        print(f"stage {stage} done{extra}")
    return EXIT_OK


def cmd_infer(args) -> int:
    try:
        model, meta = model_from_checkpoint(args.ckpt)
    except (CheckpointError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if model.kind != "ascmamba":
        print("error: infer expects an ASCMamba checkpoint", file=sys.stderr)
        return EXIT_CONFIG
    fcfg = FeatureConfig(**meta["features"]) if "features" in meta else FeatureConfig()
    records = read_manifest(args.manifest)
    root = args.audio_root or Path(args.manifest).parent
    feats, failures, _ = extract_many(records, root, fcfg, args.cache)
    usable = [r for r in records if r.filename in feats]
    x = np.stack([standardize(feats[r.filename]).astype(np.float32) for r in usable]) if usable else None
    use_cond = not args.no_condition and meta.get("condition_policy", "with") == "with"
    conds = model.conditions(usable) if use_cond else None
    post = predict_posteriors(model, [r.filename for r in usable], x, conds) if usable else {}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["filename", "predicted_scene", "confidence"])
    for r in records:
        if r.filename in post:
            p = post[r.filename]
            writer.writerow([r.filename, SCENES[int(np.argmax(p))], f"{float(np.max(p)):.6f}"])
    _emit(buf.getvalue(), args.out)
    for name, err in sorted(failures.items()):
        print(f"FAILED {name}: {err}", file=sys.stderr)
    return EXIT_DATA if failures else EXIT_OK


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_split_valid(args) -> int:
    fcfg = _feature_config(args)
    valid = read_manifest(args.manifest)
    pool = read_manifest(args.eval_manifest)
    vfeat, vfail, _ = extract_many(valid, args.audio_root, fcfg, args.cache)
    efeat, efail, _ = extract_many(pool, args.eval_audio_root or args.audio_root, fcfg, args.cache)
    if not efeat:
        print("error: no usable clips in the evaluation pool", file=sys.stderr)
        return EXIT_DATA
    ref = reference_stats([feature_stats(efeat[n]) for n in sorted(efeat)])
    stats = {n: feature_stats(f) for n, f in vfeat.items()}
    result = split_validation(stats, SplitConfig(args.threshold, args.invert, tuple(ref.tolist())))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_name = {r.filename: r for r in valid}
    write_manifest(out / "easy.csv", [by_name[n] for n in result.easy])
    write_manifest(out / "hard.csv", [by_name[n] for n in result.hard])
    summary = {"threshold": args.threshold, "inverted": args.invert, "n_easy": len(result.easy),
               "n_hard": len(result.hard), "similarity": {k: round(v, 8) for k, v in result.similarity.items()},
               "skipped": sorted(set(vfail) | set(efail))}
    (out / "split_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")
    print(f"easy={len(result.easy)} hard={len(result.hard)}")
    return EXIT_DATA if vfail or efail else EXIT_OK


def cmd_perturb(args) -> int:
    unseen = tuple(s.strip() for s in args.unseen.split(",")) if args.unseen else DEFAULT_UNSEEN
    cfg = PerturbConfig(args.mode, args.x, unseen, args.seed, args.independent)
    records = read_manifest(args.manifest)
    write_manifest(args.out, perturb(records, cfg))
    print(f"perturbed {args.mode} x={args.x}% of {len(records)} clips -> {args.out}")
    return EXIT_OK


def _read_predictions(path) -> dict[str, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"filename", "predicted_scene"} <= set(reader.fieldnames):
            raise ManifestError(f"{path}: predictions need filename,predicted_scene columns")
        return {row["filename"]: SCENES.index(row["predicted_scene"]) for row in reader}


def cmd_evaluate(args) -> int:
    truth = {r.filename: r.scene for r in read_manifest(args.manifest) if r.scene is not None}
    preds = _read_predictions(args.predictions)
    names = sorted(set(truth) & set(preds))
    missing = sorted(set(truth) - set(preds))
    if not names:
        print("error: no labelled clip has a prediction", file=sys.stderr)
        return EXIT_DATA
    p = np.array([preds[n] for n in names])
    y = np.array([truth[n] for n in names])
    _, macro = macro_accuracy(p, y)
    print(f"accuracy={accuracy(p, y):.6f} macro_accuracy={macro:.6f} n={len(names)}")
    report = class_report(p, y, args.system)
    report["missing_predictions"] = missing
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_DATA if missing else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ascmamba", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract and cache log-mel features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", required=True)
    p.add_argument("--out", required=True, help="cache directory")
    p.add_argument("--config", help="run config whose 'features' section to use")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="run the four-stage pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--from-stage", type=int, default=1, choices=(1, 2, 3, 4))
    p.add_argument("--to-stage", type=int, default=4, choices=(1, 2, 3, 4))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict scenes for a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", help="defaults to the manifest's directory")
    p.add_argument("--no-condition", action="store_true", help="ignore location/time metadata")
    p.add_argument("--cache")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("split-valid", help="split validation clips into easy/hard")
    p.add_argument("--manifest", required=True, help="validation manifest")
    p.add_argument("--eval-manifest", required=True, help="evaluation pool manifest")
    p.add_argument("--audio-root", required=True)
    p.add_argument("--eval-audio-root")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--invert", action="store_true")
    p.add_argument("--config")
    p.add_argument("--cache")
    p.set_defaults(func=cmd_split_valid)

    p = sub.add_parser("perturb", help="shuffle metadata or swap in unseen locations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("shuffle", "unseen_location"), default="shuffle")
    p.add_argument("--x", type=float, required=True, help="percentage of clips affected")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unseen", help="comma-separated replacement locations")
    p.add_argument("--independent", action="store_true", help="shuffle location and time separately")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("evaluate", help="accuracy and macro accuracy of predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--system", default="ASCMamba")
    p.add_argument("--out", help="per-class JSON report")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
