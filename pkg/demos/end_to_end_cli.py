"""Synthesize a small scene corpus and drive every CLI subcommand over it.

Run:  python demos/end_to_end_cli.py [workdir]

The corpus uses 8 kHz, 0.4 s clips and an 8-band front end so the whole
four-stage pipeline finishes in well under a minute on a laptop.
"""
import json
import sys
import tempfile
from pathlib import Path

from ascmamba.cli import main
from ascmamba.synthetic import CorpusSpec, tiny_run_config, write_corpus


def run(*argv: str) -> None:
    print("$ ascmamba " + " ".join(argv))
    code = main(list(argv))
    print(f"  -> exit {code}\n")


def demo(work: Path) -> None:
    paths = write_corpus(work, CorpusSpec(), seed=0)
    config = work / "config.json"
    config.write_text(json.dumps(tiny_run_config(seed=0, run_dir="run"), indent=2))
    print(f"corpus and config written under {work}\n")

    run("features", "--manifest", str(paths["dev"]), "--audio-root", str(paths["audio"]),
        "--out", str(work / "cache"), "--config", str(config))
    run("train", "--config", str(config))
    for stage in (1, 2, 3, 4):
        report = json.loads((work / "run" / f"stage{stage}.json").read_text())
        summary = {k: report[k] for k in ("valid", "accepted_step1", "accepted_step2", "rows_by_provenance")
                   if k in report}
        print(f"stage {stage}: {summary}")
    print()

    ckpt = str(work / "run" / "stage4.ckpt")
    valid = str(paths["valid"])
    run("infer", "--ckpt", ckpt, "--manifest", valid, "--audio-root", str(paths["audio"]),
        "--cache", str(work / "cache"), "--out", str(work / "pred.csv"))
    run("evaluate", "--predictions", str(work / "pred.csv"), "--manifest", valid,
        "--out", str(work / "report.json"))

    # metadata robustness: shuffle every clip's location/time, then re-score
    run("perturb", "--manifest", valid, "--mode", "shuffle", "--x", "100", "--seed", "1",
        "--out", str(work / "valid_shuffled.csv"))
    run("infer", "--ckpt", ckpt, "--manifest", str(work / "valid_shuffled.csv"),
        "--audio-root", str(paths["audio"]), "--cache", str(work / "cache"), "--out", str(work / "pred_shuffled.csv"))
    run("evaluate", "--predictions", str(work / "pred_shuffled.csv"), "--manifest", valid)

    run("split-valid", "--manifest", valid, "--eval-manifest", str(paths["dev"]),
        "--audio-root", str(paths["audio"]), "--out-dir", str(work / "split"), "--config", str(config),
        "--cache", str(work / "cache"))


if __name__ == "__main__":
    if len(sys.argv) > 1:
        demo(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            demo(Path(tmp))
