"""Score fusion and two-step pseudo-labelling on hand-made numbers.

Run:  python demos/fusion_and_pseudo_labels.py
"""
from datetime import datetime

import numpy as np

from ascmamba.data import SCENES, ClipRecord
from ascmamba.semisup import agreement_labels, build_training_set, select_top_confident
from ascmamba.setrans import ScenePartition, score_fusion


def fusion() -> None:
    part = ScenePartition()
    print("indoor scenes:", ", ".join(SCENES[i] for i in sorted(part.indoor)))
    y1 = np.full(10, 0.03125)
    y1[SCENES.index("bus")] = 0.40
    y1[SCENES.index("traffic_street")] = 0.35
    y2 = np.array([0.30, 0.70])
    for name in ("bus", "traffic_street"):
        k = SCENES.index(name)
        group = y2[0] if k in part.indoor else y2[1]
        print(f"  {name:<15} scene {y1[k]:.2f} x group {group:.2f} = {y1[k] * group:.3f}")
    print(f"audio-only pick: {SCENES[int(np.argmax(y1))]}; fused pick: {SCENES[score_fusion(y1, y2)]}\n")


def pseudo_labels() -> None:
    rng = np.random.default_rng(3)
    posteriors = {f"clip{i:02d}.wav": rng.dirichlet(np.full(10, 0.3)) for i in range(20)}
    step1 = select_top_confident(posteriors, ratio=0.9)
    print(f"step 1 keeps {len(step1.accepted)} of {len(posteriors)} clips; residual: {step1.residual}")

    # a second model re-labels the residual; only agreements survive
    first = {n: int(np.argmax(posteriors[n])) for n in step1.residual}
    second = dict(first)
    second[step1.residual[0]] = (first[step1.residual[0]] + 1) % 10
    step2 = agreement_labels(first, second)
    print(f"step 2 keeps {[n for n, _, _ in step2.accepted]}")

    pool = [ClipRecord(n, None, "Hefei", datetime(2023, 5, 1)) for n in posteriors]
    labeled = [ClipRecord("real00.wav", 2, "Hefei", datetime(2023, 5, 1))]
    rows = build_training_set(labeled, [step1, step2], pool)
    counts = {p: sum(r.provenance == p for r in rows) for p in ("labeled", "step1", "step2")}
    print(f"final training set: {len(rows)} rows {counts}")


if __name__ == "__main__":
    fusion()
    pseudo_labels()
