"""Two-step pseudo-labelling and the four-stage training pipeline.

Stage 1 pretrains ASCMamba, stage 2 fine-tunes it on the labelled development
rows (and trains the improved SE-Trans on the same rows), stage 3 pseudo-labels
the unlabelled rows, stage 4 fine-tunes on labelled + reliable pseudo-labelled
rows.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import SCENES, ClipRecord, read_manifest, write_manifest
from .evalkit import accuracy, macro_accuracy
from .feature_cache import extract_many
from .features import standardize
from .model import ASCMamba, ASCMambaConfig, LocationVocab, encode_condition
from .numcore import ParamStore
from .setrans import ImprovedSETrans, SETransConfig, ScenePartition
from .training import Dataset, TrainConfig, format_epoch_log, train

log = logging.getLogger(__name__)

__all__ = ["PseudoLabelSet", "TrainingRow", "predict_posteriors", "select_top_confident",
           "agreement_labels", "build_training_set", "model_to_checkpoint", "model_from_checkpoint",
           "PipelineError", "run_pipeline", "STAGES"]

STAGES = (1, 2, 3, 4)


@dataclass
class PseudoLabelSet:
    accepted: list[tuple[str, int, float]] = field(default_factory=list)
    residual: list[str] = field(default_factory=list)
    provenance: str = "step1"

    def to_dict(self) -> dict:
        return {"provenance": self.provenance,
                "accepted": [[f, SCENES[c], conf] for f, c, conf in self.accepted],
                "residual": list(self.residual)}

    @classmethod
    def from_dict(cls, d: dict) -> "PseudoLabelSet":
        return cls([(f, SCENES.index(c), float(conf)) for f, c, conf in d["accepted"]],
                   list(d["residual"]), d["provenance"])


@dataclass(frozen=True)
class TrainingRow:
    record: ClipRecord
    provenance: str


# -- pseudo-labelling ------------------------------------------------------

def predict_posteriors(model, filenames: Sequence[str], features, conditions=None) -> dict[str, np.ndarray]:
    """Class posteriors per clip, keyed and ordered by filename.

    Clips are scored one at a time so a posterior never depends on batch
    composition.
    """
    out = {}
    for i in sorted(range(len(filenames)), key=lambda j: filenames[j]):
        cond = None if conditions is None else [conditions[i]]
        probs = model.predict_proba(np.asarray(features[i])[None], cond)
        out[filenames[i]] = (probs[0] if isinstance(probs, np.ndarray) else probs[0][0])
    return out


def select_top_confident(posteriors: Mapping[str, np.ndarray], ratio: float = 0.9,
                         per_class: bool = False) -> PseudoLabelSet:
    """Accept the ``floor(ratio·N)`` most confident clips (confidence = max posterior).

    Ties are broken by ascending filename.  With ``per_class`` the cut is
    applied separately within each predicted class.
    """
    if not posteriors:
        raise ValueError("no posteriors to select from")
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    scored = [(name, int(np.argmax(p)), float(np.max(p))) for name, p in posteriors.items()]
    groups = ([scored] if not per_class else
              [[s for s in scored if s[1] == c] for c in sorted({s[1] for s in scored})])
    accepted, residual = [], []
    for group in groups:
        ranked = sorted(group, key=lambda s: (-s[2], s[0]))
        k = math.floor(ratio * len(ranked) + 1e-9)
        accepted.extend(ranked[:k])
        residual.extend(s[0] for s in ranked[k:])
    if per_class:
        accepted.sort(key=lambda s: (-s[2], s[0]))
    return PseudoLabelSet(accepted, sorted(residual), "step1")


def agreement_labels(preds_a: Mapping[str, int], preds_b: Mapping[str, int],
                     confidences: Mapping[str, float] | None = None) -> PseudoLabelSet:
    """Keep clips on which both models predict the same class."""
    if set(preds_a) != set(preds_b):
        raise ValueError("the two prediction sets cover different clips")
    accepted = [(name, int(preds_a[name]), float(confidences[name]) if confidences else 1.0)
                for name in sorted(preds_a) if int(preds_a[name]) == int(preds_b[name])]
    return PseudoLabelSet(accepted, [], "step2")


def build_training_set(labeled: Sequence[ClipRecord], pseudo: Sequence[PseudoLabelSet],
                       pool: Sequence[ClipRecord] = ()) -> list[TrainingRow]:
    """Union of real labels and pseudo labels; real labels win on conflict.

    ``pool`` supplies location/time metadata for pseudo-labelled filenames.
    """
    rows: dict[str, TrainingRow] = {}
    for r in labeled:
        if r.scene is None:
            continue
        prev = rows.get(r.filename)
        if prev is not None and prev.record.scene != r.scene:
            raise ValueError(f"conflicting real labels for {r.filename}")
        rows[r.filename] = TrainingRow(r, "labeled")
    meta = {r.filename: r for r in pool}
    for ps in pseudo:
        for name, cls, _ in ps.accepted:
            if name in rows:
                continue
            if name not in meta:
                raise ValueError(f"no metadata for pseudo-labelled clip {name}")
            rows[name] = TrainingRow(meta[name].with_scene(cls), ps.provenance)
    return list(rows.values())


# -- checkpoints for models ------------------------------------------------

def model_to_checkpoint(model, path, extra: dict | None = None) -> None:
    config = {"kind": model.kind, "model": model.cfg.to_dict()}
    if model.kind == "ascmamba":
        config["locations"] = model.vocab.names
    else:
        config["partition"] = {"indoor": sorted(model.partition.indoor),
                               "outdoor": sorted(model.partition.outdoor)}
    config.update(extra or {})
    save_checkpoint(model.params, config, path)


def model_from_checkpoint(path):
    """Rebuild a model, checking every tensor against the configured shapes."""
    tensors, config = load_checkpoint(path)
    kind = config.get("kind")
    if kind == "ascmamba":
        mc = config["model"]
        model = ASCMamba(ASCMambaConfig(**mc), LocationVocab(config.get("locations", [])))
    elif kind == "setrans":
        mc = dict(config["model"])
        mc["channels"] = tuple(mc["channels"])
        part = config.get("partition")
        partition = (ScenePartition(frozenset(part["indoor"]), frozenset(part["outdoor"]))
                     if part else ScenePartition())
        model = ImprovedSETrans(SETransConfig(**mc), partition=partition)
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    expected = {n: t.shape for n, t in model.params.items()}
    got = {n: a.shape for n, a in tensors.items()}
    if expected != got:
        diff = sorted(n for n in set(expected) | set(got) if expected.get(n) != got.get(n))
        raise ValueError(f"{path}: checkpoint does not match its config at {', '.join(diff[:5])}")
    model.params = ParamStore.from_arrays(tensors, dtype=np.float32)
    return model, config


# -- pipeline --------------------------------------------------------------

class PipelineError(RuntimeError):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _round(x: float) -> float:
    return float(f"{x:.6g}")


class _Runner:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.run_dir = Path(cfg.paths.run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.dev = read_manifest(cfg.paths.dev_manifest)
        self.pretrain = read_manifest(cfg.paths.pretrain_manifest) if cfg.paths.pretrain_manifest else []
        self.valid = read_manifest(cfg.paths.valid_manifest) if cfg.paths.valid_manifest else []
        self.vocab = LocationVocab([r.location for r in self.pretrain + self.dev])
        self.partition = cfg.partition.build()
        self._features: dict[str, np.ndarray] = {}
        self.failures: dict[str, str] = {}

    # helpers
    def features_for(self, records: Sequence[ClipRecord]) -> list[ClipRecord]:
        todo = [r for r in records if r.filename not in self._features and r.filename not in self.failures]
        if todo:
            feats, fails, _ = extract_many(todo, self.cfg.paths.audio_root, self.cfg.features,
                                           self.cfg.paths.feature_cache)
            self._features.update({k: standardize(v).astype(np.float32) for k, v in feats.items()})
            self.failures.update(fails)
        return [r for r in records if r.filename in self._features]

    def dataset(self, records: Sequence[ClipRecord], vocab: LocationVocab) -> Dataset:
        recs = self.features_for(records)
        if not recs:
            raise PipelineError("no usable clips for this stage")
        conds = [encode_condition(r.location, r.record_time, vocab) for r in recs]
        return Dataset([r.filename for r in recs], np.stack([self._features[r.filename] for r in recs]),
                       np.array([r.scene for r in recs]), conds)

    def train_cfg(self, stage: int, epochs: int) -> TrainConfig:
        return dataclasses.replace(self.cfg.train, epochs=epochs, seed=self.cfg.seed + stage)

    def ckpt(self, name: str) -> Path:
        return self.run_dir / name

    def require(self, name: str) -> Path:
        p = self.ckpt(name)
        if not p.exists():
            raise PipelineError(f"missing prior-stage checkpoint {p}")
        return p

    def evaluate(self, model, fused: bool = False) -> dict | None:
        if not self.valid:
            return None
        recs = self.features_for(self.valid)
        labels = np.array([r.scene for r in recs])
        feats = np.stack([self._features[r.filename] for r in recs])
        if fused:
            preds = np.array([model.predict(feats[i:i + 1])[0] for i in range(len(recs))])
        else:
            conds = model.conditions(recs) if self.cfg.use_conditions else None
            post = predict_posteriors(model, [r.filename for r in recs], feats, conds)
            preds = np.array([int(np.argmax(post[r.filename])) for r in recs])
        _, macro = macro_accuracy(preds, labels)
        return {"accuracy": _round(accuracy(preds, labels)), "macro_accuracy": _round(macro),
                "n": len(recs)}

    def snapshot(self, stage: int) -> dict:
        return {"stage": stage, "seed": self.cfg.seed, "condition_policy": self.cfg.condition_policy,
                "features": dataclasses.asdict(self.cfg.features)}

    def fit(self, model, ds: Dataset, tcfg: TrainConfig, tag: str) -> list[dict]:
        history = train(model, ds, tcfg, use_conditions=self.cfg.use_conditions)
        (self.run_dir / f"{tag}_log.csv").write_text(format_epoch_log(history), encoding="utf-8")
        return history

    @staticmethod
    def summary(history: list[dict]) -> dict:
        if not history:
            return {"epochs": 0}
        return {"epochs": len(history), "final_loss": _round(history[-1]["loss"]),
                "final_train_acc": _round(history[-1]["train_acc"])}

    def failure_report(self) -> dict:
        return dict(sorted(self.failures.items()))

    # stages
    def stage1(self) -> dict:
        cfg = self.cfg
        model = ASCMamba(cfg.model, self.vocab, seed=cfg.seed)
        labeled = [r for r in self.pretrain if r.labeled]
        history = []
        n = 0
        if labeled and cfg.stage_epochs.pretrain > 0:
            ds = self.dataset(labeled, self.vocab)
            n = len(ds)
            history = self.fit(model, ds, self.train_cfg(1, cfg.stage_epochs.pretrain), "stage1")
        model_to_checkpoint(model, self.ckpt("stage1.ckpt"), self.snapshot(1))
        return {"stage": 1, "n_train": n, "train": self.summary(history),
                "valid": self.evaluate(model), "skipped_clips": self.failure_report()}

    def stage2(self) -> dict:
        cfg = self.cfg
        model, _ = model_from_checkpoint(self.require("stage1.ckpt"))
        model.cfg = dataclasses.replace(model.cfg, dropout=cfg.model.dropout)
        ds = self.dataset([r for r in self.dev if r.labeled], model.vocab)
        history = self.fit(model, ds, self.train_cfg(2, cfg.stage_epochs.finetune), "stage2")
        model_to_checkpoint(model, self.ckpt("stage2.ckpt"), self.snapshot(2))
        aux = ImprovedSETrans(cfg.setrans, seed=cfg.seed, partition=self.partition)
        aux_ds = dataclasses.replace(ds, conditions=None)
        aux_history = train(aux, aux_ds, self.train_cfg(2, cfg.stage_epochs.setrans), use_conditions=False)
        (self.run_dir / "stage2_setrans_log.csv").write_text(format_epoch_log(aux_history), encoding="utf-8")
        model_to_checkpoint(aux, self.ckpt("stage2_setrans.ckpt"), self.snapshot(2))
        return {"stage": 2, "n_train": len(ds), "train": self.summary(history),
                "setrans_train": self.summary(aux_history), "valid": self.evaluate(model),
                "setrans_valid": self.evaluate(aux, fused=True), "skipped_clips": self.failure_report()}

    def stage3(self) -> dict:
        cfg = self.cfg
        model, _ = model_from_checkpoint(self.require("stage2.ckpt"))
        aux, _ = model_from_checkpoint(self.require("stage2_setrans.ckpt"))
        unlabeled = self.features_for([r for r in self.dev if not r.labeled])
        if not unlabeled:
            raise PipelineError("no unlabeled development clips to pseudo-label")
        names = [r.filename for r in unlabeled]
        feats = np.stack([self._features[n] for n in names])
        conds = model.conditions(unlabeled) if cfg.use_conditions else None
        post = predict_posteriors(model, names, feats, conds)
        step1 = select_top_confident(post, cfg.pseudo.ratio, cfg.pseudo.per_class_selection)
        index = {n: i for i, n in enumerate(names)}
        res = step1.residual
        preds_a = {n: int(np.argmax(post[n])) for n in res}
        preds_b = {n: int(aux.predict(feats[index[n]][None])[0]) for n in res}
        conf = {n: float(np.max(post[n])) for n in res}
        step2 = agreement_labels(preds_a, preds_b, conf) if res else PseudoLabelSet([], [], "step2")
        rows = build_training_set([], [step1, step2], unlabeled)
        write_manifest(self.run_dir / "pseudo_labels.csv", [r.record for r in rows],
                       {"provenance": [r.provenance for r in rows]})
        model_to_checkpoint(model, self.ckpt("stage3.ckpt"), self.snapshot(3))
        confs = [c for _, _, c in step1.accepted]
        return {"stage": 3, "n_unlabeled": len(names), "ratio": cfg.pseudo.ratio,
                "accepted_step1": len(step1.accepted), "residual": len(res),
                "accepted_step2": len(step2.accepted),
                "agreement_rate": _round(len(step2.accepted) / len(res)) if res else None,
                "step1_confidence": {"max": _round(max(confs)), "min": _round(min(confs))} if confs else None,
                "pseudo_labels": {"step1": step1.to_dict(), "step2": step2.to_dict()},
                "skipped_clips": self.failure_report()}

    def stage4(self) -> dict:
        cfg = self.cfg
        model, _ = model_from_checkpoint(self.require("stage3.ckpt"))
        model.cfg = dataclasses.replace(model.cfg, dropout=cfg.model.dropout)
        report3 = self.run_dir / "stage3.json"
        if not report3.exists():
            raise PipelineError(f"missing stage-3 report {report3}")
        pl = json.loads(report3.read_text(encoding="utf-8"))["pseudo_labels"]
        sets = [PseudoLabelSet.from_dict(pl["step1"]), PseudoLabelSet.from_dict(pl["step2"])]
        rows = build_training_set([r for r in self.dev if r.labeled], sets, self.dev)
        write_manifest(self.run_dir / "training_set.csv", [r.record for r in rows],
                       {"provenance": [r.provenance for r in rows]})
        ds = self.dataset([r.record for r in rows], model.vocab)
        history = self.fit(model, ds, self.train_cfg(4, cfg.stage_epochs.final), "stage4")
        model_to_checkpoint(model, self.ckpt("stage4.ckpt"), self.snapshot(4))
        counts = {p: sum(r.provenance == p for r in rows) for p in ("labeled", "step1", "step2")}
        return {"stage": 4, "n_train": len(ds), "rows_by_provenance": counts,
                "train": self.summary(history), "valid": self.evaluate(model),
                "skipped_clips": self.failure_report()}


def run_pipeline(cfg: RunConfig, from_stage: int = 1, to_stage: int = 4) -> dict[int, dict]:
    """Run stages ``from_stage..to_stage``; each writes ``stageK.ckpt`` and ``stageK.json``.

    A failing stage raises :class:`PipelineError` (or the underlying error)
    and leaves earlier checkpoints in place.
    """
    if from_stage not in STAGES or to_stage not in STAGES or from_stage > to_stage:
        raise ValueError(f"invalid stage range {from_stage}..{to_stage}")
    runner = _Runner(cfg)
    if from_stage > 1:
        needed = {2: "stage1.ckpt", 3: "stage2.ckpt", 4: "stage3.ckpt"}[from_stage]
        runner.require(needed)
    reports = {}
    for stage in range(from_stage, to_stage + 1):
        log.info("running stage %d", stage)
        report = getattr(runner, f"stage{stage}")()
        _write_json(runner.run_dir / f"stage{stage}.json", report)
        reports[stage] = report
    return reports
