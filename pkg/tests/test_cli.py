import csv
import dataclasses
import json

import numpy as np
import pytest

from ascmamba.cli import main
from ascmamba.data import SCENES, format_manifest, read_manifest
from ascmamba.features import write_wav
from ascmamba.model import ASCMamba, ASCMambaConfig, LocationVocab
from ascmamba.semisup import model_to_checkpoint
from ascmamba.synthetic import TINY_FEATURES, CorpusSpec, tiny_run_config, write_corpus

TINY = ASCMambaConfig(channels=4, n_blocks=1, d_state=4, d_cond=8, loc_embed_dim=4, dropout=0.0)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, CorpusSpec(), seed=1)
    return root


def write_config(root, run_dir, epochs=(2, 2, 2, 2), **overrides):
    path = root / f"{run_dir}.json"
    path.write_text(json.dumps(tiny_run_config(0, epochs, run_dir=str(run_dir), **overrides)))
    return path


def features_cfg(tmp_path):
    path = tmp_path / "features.json"
    path.write_text(json.dumps(tiny_run_config(0, run_dir="unused")))
    return path


def fresh_checkpoint(path, locations=("Hefei", "Jinan")):
    m = ASCMamba(TINY, LocationVocab(list(locations)), seed=2)
    model_to_checkpoint(m, path, {"features": dataclasses.asdict(TINY_FEATURES),
                                  "condition_policy": "with"})
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- features --------------------------------------------------------------

def test_features_reports_unreadable_clip(tmp_path, capsys):
    rng = np.random.default_rng(0)
    for name in ("a", "b"):
        write_wav(tmp_path / f"{name}.wav", rng.uniform(-0.3, 0.3, TINY_FEATURES.n_samples),
                  TINY_FEATURES.sample_rate)
    (tmp_path / "c.wav").write_bytes(b"not audio")
    (tmp_path / "m.csv").write_text("filename,scene,location,record_time\n" + "".join(
        f"{n}.wav,bus,Hefei,2021-01-01T00:00:00\n" for n in "abc"))
    args = ["features", "--manifest", str(tmp_path / "m.csv"), "--audio-root", str(tmp_path),
            "--out", str(tmp_path / "cache"), "--config", str(features_cfg(tmp_path))]
    assert main(args) == 1
    err = capsys.readouterr().err
    assert "FAILED c.wav" in err and "a.wav" not in err
    assert len(list((tmp_path / "cache").iterdir())) == 2
    assert main(args) == 1
    assert "0 computed, 2 reused" in capsys.readouterr().out


# -- train -----------------------------------------------------------------

def test_train_resume_without_checkpoint_names_the_file(corpus, capsys):
    cfg = write_config(corpus, "resume_run")
    assert main(["train", "--config", str(cfg), "--from-stage", "2"]) == 2
    assert "stage1.ckpt" in capsys.readouterr().err


def test_train_rejects_bad_config(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 0, "paths": {}, "bogus": 1}))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 2
    assert "config error" in capsys.readouterr().err


def test_train_then_infer_then_evaluate(corpus, tmp_path, capsys):
    cfg = write_config(corpus, "full_run")
    assert main(["train", "--config", str(cfg)]) == 0
    run = corpus / "full_run"
    assert sorted(p.name for p in run.glob("stage?.*")) == sorted(
        [f"stage{k}.ckpt" for k in range(1, 5)] + [f"stage{k}.json" for k in range(1, 5)])
    out = tmp_path / "pred.csv"
    assert main(["infer", "--ckpt", str(run / "stage4.ckpt"), "--manifest", str(corpus / "valid.csv"),
                 "--audio-root", str(corpus / "audio"), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == len(read_manifest(corpus / "valid.csv"))
    assert all(0.0 <= float(r["confidence"]) <= 1.0 for r in rows)
    capsys.readouterr()
    assert main(["evaluate", "--predictions", str(out), "--manifest", str(corpus / "valid.csv"),
                 "--out", str(tmp_path / "report.json")]) == 0
    assert "n=20" in capsys.readouterr().out
    assert json.loads((tmp_path / "report.json").read_text())["missing_predictions"] == []


# -- infer -----------------------------------------------------------------

def test_zero_init_conditioning_makes_the_flag_irrelevant(corpus, tmp_path):
    ckpt = fresh_checkpoint(tmp_path / "m.ckpt")
    base = ["infer", "--ckpt", str(ckpt), "--manifest", str(corpus / "valid.csv"),
            "--audio-root", str(corpus / "audio")]
    assert main(base + ["--out", str(tmp_path / "with.csv")]) == 0
    assert main(base + ["--no-condition", "--out", str(tmp_path / "without.csv")]) == 0
    assert (tmp_path / "with.csv").read_bytes() == (tmp_path / "without.csv").read_bytes()


def test_infer_rejects_corrupt_checkpoint(corpus, tmp_path, capsys):
    (tmp_path / "bad.ckpt").write_bytes(b"ASCX" + bytes(20))
    assert main(["infer", "--ckpt", str(tmp_path / "bad.ckpt"),
                 "--manifest", str(corpus / "valid.csv")]) == 2
    assert "magic" in capsys.readouterr().err


# -- evaluate / perturb ----------------------------------------------------

def truth_as_predictions(manifest, path, drop=0):
    recs = [r for r in read_manifest(manifest) if r.scene is not None][drop:]
    path.write_text("filename,predicted_scene,confidence\n" +
                    "".join(f"{r.filename},{SCENES[r.scene]},1.0\n" for r in recs))
    return path


def test_evaluate_self_consistent_and_missing(corpus, tmp_path, capsys):
    pred = truth_as_predictions(corpus / "valid.csv", tmp_path / "p.csv")
    assert main(["evaluate", "--predictions", str(pred), "--manifest", str(corpus / "valid.csv")]) == 0
    assert "accuracy=1.000000 macro_accuracy=1.000000" in capsys.readouterr().out
    pred = truth_as_predictions(corpus / "valid.csv", tmp_path / "q.csv", drop=3)
    rep = tmp_path / "r.json"
    assert main(["evaluate", "--predictions", str(pred), "--manifest", str(corpus / "valid.csv"),
                 "--out", str(rep)]) == 1
    assert len(json.loads(rep.read_text())["missing_predictions"]) == 3


def test_perturbed_evaluation_is_reproducible(corpus, tmp_path, capsys):
    ckpt = fresh_checkpoint(tmp_path / "m.ckpt", ("Xi'an", "Luoyang", "Hefei", "Shanghai"))
    results = []
    for run in range(2):
        shuffled = tmp_path / f"shuffled{run}.csv"
        assert main(["perturb", "--manifest", str(corpus / "valid.csv"), "--mode", "shuffle",
                     "--x", "100", "--seed", "3", "--out", str(shuffled)]) == 0
        pred = tmp_path / f"pred{run}.csv"
        assert main(["infer", "--ckpt", str(ckpt), "--manifest", str(shuffled),
                     "--audio-root", str(corpus / "audio"), "--out", str(pred)]) == 0
        capsys.readouterr()
        assert main(["evaluate", "--predictions", str(pred), "--manifest", str(corpus / "valid.csv")]) == 0
        results.append(capsys.readouterr().out)
    assert results[0] == results[1]
    assert (tmp_path / "shuffled0.csv").read_bytes() == (tmp_path / "shuffled1.csv").read_bytes()


def test_unseen_location_perturbation(corpus, tmp_path):
    out = tmp_path / "u.csv"
    assert main(["perturb", "--manifest", str(corpus / "valid.csv"), "--mode", "unseen_location",
                 "--x", "50", "--unseen", "Atlantis", "--out", str(out)]) == 0
    recs = read_manifest(out)
    assert sum(r.location == "Atlantis" for r in recs) == len(recs) // 2


# -- split-valid -----------------------------------------------------------

def test_split_valid_partitions_the_manifest(corpus, tmp_path):
    out = tmp_path / "split"
    assert main(["split-valid", "--manifest", str(corpus / "valid.csv"),
                 "--eval-manifest", str(corpus / "dev.csv"), "--audio-root", str(corpus / "audio"),
                 "--out-dir", str(out), "--config", str(features_cfg(tmp_path))]) == 0
    easy, hard = read_manifest(out / "easy.csv"), read_manifest(out / "hard.csv")
    names = {r.filename for r in read_manifest(corpus / "valid.csv")}
    assert {r.filename for r in easy} | {r.filename for r in hard} == names
    assert not {r.filename for r in easy} & {r.filename for r in hard}
    summary = json.loads((out / "split_summary.json").read_text())
    assert summary["n_easy"] + summary["n_hard"] == len(names)
    assert all(-1 <= s <= 1 for s in summary["similarity"].values())


def test_manifest_error_exits_with_data_code(tmp_path, capsys):
    (tmp_path / "m.csv").write_text("wrong,header\n")
    assert main(["perturb", "--manifest", str(tmp_path / "m.csv"), "--x", "10",
                 "--out", str(tmp_path / "o.csv")]) == 1
    assert "header" in capsys.readouterr().err


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for cmd in ("features", "train", "infer", "split-valid", "perturb", "evaluate"):
        assert cmd in text


def test_manifest_writer_is_used_for_outputs(corpus, tmp_path):
    out = tmp_path / "same.csv"
    main(["perturb", "--manifest", str(corpus / "valid.csv"), "--x", "0", "--out", str(out)])
    assert out.read_text() == format_manifest(read_manifest(corpus / "valid.csv"))
