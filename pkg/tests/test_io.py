"""Manifests, the checkpoint container, run configs and the feature cache."""
import json
import struct
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ascmamba.checkpoint import (CheckpointError, dumps_checkpoint, load_checkpoint, loads_checkpoint,
                                 save_checkpoint)
from ascmamba.config import ConfigError, config_from_dict, config_to_dict, load_config
from ascmamba.data import ClipRecord, ManifestError, format_manifest, parse_manifest, read_manifest
from ascmamba.feature_cache import cache_path, extract_cached, extract_many
from ascmamba.features import write_wav
from ascmamba.synthetic import TINY_FEATURES

HEADER = "filename,scene,location,record_time\n"


# -- manifests -------------------------------------------------------------

def test_manifest_round_trip():
    text = HEADER + "a.wav,bus,Hefei,2021-03-05T14:30:00\nb.wav,,Jinan,2021-12-31T23:59:59\n"
    recs = parse_manifest(text)
    assert recs[0] == ClipRecord("a.wav", 2, "Hefei", datetime(2021, 3, 5, 14, 30))
    assert recs[1].scene is None and not recs[1].labeled
    assert format_manifest(recs) == text


@pytest.mark.parametrize("text, message", [
    ("name,scene,location,record_time\n", "header"),
    (HEADER + "a.wav,bus,Hefei\n", "expected 4 fields"),
    (HEADER + "a.wav,spaceship,Hefei,2021-01-01T00:00:00\n", "unknown scene"),
    (HEADER + "a.wav,bus,Hefei,yesterday\n", "record_time"),
    (HEADER + "a.wav,bus,X,2021-01-01T00:00:00\na.wav,bar,Y,2021-01-01T00:00:00\n", "duplicate"),
])
def test_manifest_schema_violations(text, message):
    with pytest.raises(ManifestError, match=message):
        parse_manifest(text)


def test_manifest_extra_columns(tmp_path):
    recs = parse_manifest(HEADER + "a.wav,bus,Hefei,2021-03-05T14:30:00\n")
    text = format_manifest(recs, {"provenance": ["labeled"]})
    assert text.splitlines()[0].endswith(",provenance")
    (tmp_path / "m.csv").write_text(HEADER + "a.wav,Bus,Hefei,2021-03-05T14:30:00\n")
    assert read_manifest(tmp_path / "m.csv")[0].scene == 2


# -- checkpoint container --------------------------------------------------

def sample_tensors():
    rng = np.random.default_rng(0)
    return {"b": rng.standard_normal(3).astype(np.float32),
            "a.weight": rng.standard_normal((2, 4)).astype(np.float32),
            "scalar": np.float32(1.5)}


def test_checkpoint_layout():
    blob = dumps_checkpoint(sample_tensors(), {"kind": "x", "n": 1})
    magic, version, mlen = struct.unpack_from("<4sIQ", blob)
    assert magic == b"ASCM" and version == 1
    manifest = json.loads(blob[16:16 + mlen])
    assert [t["name"] for t in manifest["tensors"]] == ["a.weight", "b", "scalar"]
    assert manifest["tensors"][1] == {"name": "b", "shape": [3], "offset": 32}
    assert len(blob) == 16 + mlen + 4 * (8 + 3 + 1)
    # raw little-endian float32 payload
    payload = np.frombuffer(blob[16 + mlen:], dtype="<f4")
    np.testing.assert_array_equal(payload[8:11], sample_tensors()["b"])


def test_checkpoint_save_load_save_is_byte_identical(tmp_path):
    save_checkpoint(sample_tensors(), {"kind": "x", "nested": {"z": [1, 2], "a": "é"}}, tmp_path / "1.ckpt")
    tensors, config = load_checkpoint(tmp_path / "1.ckpt")
    save_checkpoint(tensors, config, tmp_path / "2.ckpt")
    assert (tmp_path / "1.ckpt").read_bytes() == (tmp_path / "2.ckpt").read_bytes()
    for name, arr in sample_tensors().items():
        np.testing.assert_array_equal(tensors[name], arr)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text("abcxyz._", min_size=1, max_size=8),
                       st.lists(st.integers(0, 3), max_size=3), max_size=5),
       st.integers(0, 2**31 - 1))
def test_checkpoint_round_trip_property(shapes, seed):
    rng = np.random.default_rng(seed)
    tensors = {n: rng.standard_normal(s).astype(np.float32) for n, s in shapes.items()}
    blob = dumps_checkpoint(tensors, {"seed": seed})
    back, cfg = loads_checkpoint(blob)
    assert cfg == {"seed": seed} and dumps_checkpoint(back, cfg) == blob


def test_checkpoint_errors(tmp_path):
    blob = dumps_checkpoint(sample_tensors(), {})
    with pytest.raises(CheckpointError, match="bad magic"):
        loads_checkpoint(b"X" + blob[1:])
    with pytest.raises(CheckpointError, match="version mismatch"):
        loads_checkpoint(blob[:4] + struct.pack("<I", 2) + blob[8:])
    with pytest.raises(CheckpointError, match="truncated data for tensor 'scalar'"):
        loads_checkpoint(blob[:-2])
    with pytest.raises(CheckpointError, match="truncated manifest"):
        loads_checkpoint(blob[:20])
    with pytest.raises(CheckpointError, match="trailing"):
        loads_checkpoint(blob + b"\0\0\0\0")
    with pytest.raises(FileNotFoundError, match="missing checkpoint"):
        load_checkpoint(tmp_path / "none.ckpt")


# -- run config ------------------------------------------------------------

def minimal_config(**extra):
    data = {"seed": 0, "paths": {"dev_manifest": "dev.csv", "audio_root": "audio", "run_dir": "run"}}
    data.update(extra)
    return data


def test_config_defaults_and_path_resolution(tmp_path):
    cfg = config_from_dict(minimal_config(features={"n_mels": 8}, train={"dropout": 0.2}), tmp_path)
    assert cfg.paths.run_dir == str(tmp_path / "run")
    assert cfg.setrans.n_mels == 8 and cfg.setrans.dropout == 0.2 and cfg.model.dropout == 0.2
    assert cfg.use_conditions and cfg.pseudo.ratio == 0.9 and cfg.split.similarity_threshold == 0.9


def test_config_round_trips_through_dict(tmp_path):
    cfg = config_from_dict(minimal_config(setrans={"channels": [4, 8]}), tmp_path)
    assert config_from_dict(config_to_dict(cfg)) == cfg


@pytest.mark.parametrize("data, message", [
    ({"paths": {"dev_manifest": "d", "audio_root": "a", "run_dir": "r"}}, "seed"),
    ({"seed": 0}, "paths"),
    (minimal_config(modle={}), "unknown key"),
    (minimal_config(train={"learning_rat": 0.1}), "unknown key"),
    (minimal_config(condition_policy="sometimes"), "condition_policy"),
    (minimal_config(pseudo={"ratio": 1.5}), "ratio"),
    (minimal_config(partition={"indoor": ["bus"], "outdoor": ["bar"]}), "partition"),
    (minimal_config(features={"n_mels": 8}, setrans={"n_mels": 16}), "n_mels"),
])
def test_config_errors(data, message):
    with pytest.raises(ConfigError, match=message):
        config_from_dict(data)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")
    (tmp_path / "ok.json").write_text(json.dumps(minimal_config()))
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "ok.json").validate_paths()


# -- feature cache ---------------------------------------------------------

def write_clip(path, seed=0):
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, TINY_FEATURES.n_samples)
    write_wav(path, x, TINY_FEATURES.sample_rate)


def test_cache_hit_reuses_stored_feature(tmp_path):
    write_clip(tmp_path / "a.wav")
    f1, fresh1 = extract_cached(tmp_path / "a.wav", TINY_FEATURES, tmp_path / "cache")
    f2, fresh2 = extract_cached(tmp_path / "a.wav", TINY_FEATURES, tmp_path / "cache")
    assert fresh1 and not fresh2
    assert f1.shape == (20, 8)
    np.testing.assert_array_equal(f1, f2)
    assert cache_path(tmp_path / "cache", "a.wav").exists()


def test_cache_invalidated_by_new_audio(tmp_path):
    write_clip(tmp_path / "a.wav", seed=0)
    f1, _ = extract_cached(tmp_path / "a.wav", TINY_FEATURES, tmp_path / "cache")
    write_clip(tmp_path / "a.wav", seed=1)
    f2, fresh = extract_cached(tmp_path / "a.wav", TINY_FEATURES, tmp_path / "cache")
    assert fresh and not np.array_equal(f1, f2)


def test_extract_many_reports_failures(tmp_path):
    recs = parse_manifest(HEADER + "".join(f"{n}.wav,bus,X,2021-01-01T00:00:00\n" for n in "abc"))
    write_clip(tmp_path / "a.wav")
    write_clip(tmp_path / "b.wav")
    (tmp_path / "c.wav").write_bytes(b"RIFF")
    feats, failures, computed = extract_many(recs, tmp_path, TINY_FEATURES, tmp_path / "cache")
    assert sorted(feats) == ["a.wav", "b.wav"] and computed == 2
    assert list(failures) == ["c.wav"] and "malformed WAV" in failures["c.wav"]


def test_extract_many_threaded_matches_serial(tmp_path):
    recs = parse_manifest(HEADER + "".join(f"{i}.wav,bus,X,2021-01-01T00:00:00\n" for i in range(6)))
    for i in range(6):
        write_clip(tmp_path / f"{i}.wav", seed=i)
    serial, _, _ = extract_many(recs, tmp_path, TINY_FEATURES, None, workers=1)
    threaded, _, _ = extract_many(recs, tmp_path, TINY_FEATURES, None, workers=3)
    for k in serial:
        assert serial[k].tobytes() == threaded[k].tobytes()
