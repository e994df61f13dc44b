from collections import Counter
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ascmamba.data import ClipRecord
from ascmamba.evalkit import (DEFAULT_UNSEEN, PerturbConfig, SplitConfig, accuracy, affected_count,
                              class_report, cosine_similarity, macro_accuracy, perturb,
                              reference_stats, shuffle_metadata, split_validation,
                              swap_unseen_locations)


def records(n, seed=0):
    rng = np.random.default_rng(seed)
    t0 = datetime(2021, 1, 1)
    return [ClipRecord(f"clip{i:03d}.wav", int(rng.integers(0, 10)), f"city{int(rng.integers(0, 5))}",
                       t0 + timedelta(minutes=int(rng.integers(0, 10**6)))) for i in range(n)]


# -- similarity / split ----------------------------------------------------

def test_cosine_examples():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 0], [1, 1]) == pytest.approx(0.70711, abs=1e-5)
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 1])
    with pytest.raises(ValueError):
        cosine_similarity([1, 0], [1, 0, 0])


def angled(sim):
    """2-D vector at the given cosine similarity to the reference (1, 0)."""
    return [sim, np.sqrt(1 - sim * sim)]


def test_split_threshold_boundary():
    cfg = SplitConfig(0.9, reference=(1.0, 0.0))
    res = split_validation({"hi": angled(0.95), "eq": angled(0.9), "lo": angled(0.3)}, cfg)
    assert res.hard == ["hi"] and res.easy == ["eq", "lo"]
    inv = split_validation({"hi": angled(0.95), "lo": angled(0.3)}, SplitConfig(0.9, True, (1.0, 0.0)))
    assert inv.easy == ["hi"] and inv.hard == ["lo"]


def test_split_needs_reference_and_clips():
    with pytest.raises(ValueError):
        split_validation({"a": [1, 0]}, SplitConfig())
    with pytest.raises(ValueError):
        split_validation({}, SplitConfig(reference=(1.0, 0.0)))
    with pytest.raises(ValueError):
        SplitConfig(1.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_split_is_a_monotone_partition(seed, n):
    rng = np.random.default_rng(seed)
    stats = {f"c{i}": rng.standard_normal(6) + 2 for i in range(n)}
    ref = tuple(reference_stats(list(stats.values())))
    previous_hard = None
    for thr in np.linspace(0, 1, 11):
        res = split_validation(stats, SplitConfig(float(thr), reference=ref))
        assert set(res.easy) | set(res.hard) == set(stats)
        assert not set(res.easy) & set(res.hard)
        if previous_hard is not None:
            assert set(res.hard) <= previous_hard
        previous_hard = set(res.hard)


# -- perturbations ---------------------------------------------------------

def test_affected_count_rounding():
    assert affected_count(40, 5) == 2
    assert affected_count(10, 5) == 1     # 0.5 rounds up
    assert affected_count(10, 0) == 0 and affected_count(7, 100) == 7


def test_zero_proportion_is_identity():
    recs = records(20)
    assert shuffle_metadata(recs, PerturbConfig(proportion=0)) == recs
    assert swap_unseen_locations(recs, PerturbConfig("unseen_location", proportion=0)) == recs


def test_five_percent_of_forty_touches_two_clips():
    recs = records(40)
    out = shuffle_metadata(recs, PerturbConfig(proportion=5, seed=3))
    changed = [a for a, b in zip(recs, out) if (a.location, a.record_time) != (b.location, b.record_time)]
    assert len(changed) == 2


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 50), st.floats(0, 100), st.booleans())
def test_shuffle_preserves_metadata_multiset(seed, n, x, independent):
    recs = records(n, seed)
    cfg = PerturbConfig(proportion=x, seed=seed, independent_shuffle=independent)
    out = shuffle_metadata(recs, cfg)
    assert [(r.filename, r.scene) for r in out] == [(r.filename, r.scene) for r in recs]
    assert Counter(r.location for r in out) == Counter(r.location for r in recs)
    assert Counter(r.record_time for r in out) == Counter(r.record_time for r in recs)
    if not independent:
        pairs = lambda rs: Counter((r.location, r.record_time) for r in rs)
        assert pairs(out) == pairs(recs)
    moved = sum(a != b for a, b in zip(recs, out))
    assert moved <= affected_count(n, x)
    if affected_count(n, x) >= 2:
        # cyclic permutation: every selected clip receives another clip's metadata
        assert moved == affected_count(n, x)


def test_full_shuffle_is_seeded():
    recs = records(30)
    a = shuffle_metadata(recs, PerturbConfig(proportion=100, seed=1))
    assert a == shuffle_metadata(recs, PerturbConfig(proportion=100, seed=1))
    assert a != shuffle_metadata(recs, PerturbConfig(proportion=100, seed=2))


def test_selection_ignores_input_order():
    recs = records(30)
    cfg = PerturbConfig(proportion=50, seed=4)
    forward = {r.filename: r for r in shuffle_metadata(recs, cfg)}
    backward = {r.filename: r for r in shuffle_metadata(recs[::-1], cfg)}
    assert forward == backward


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 50), st.floats(0, 100))
def test_unseen_swap_contract(seed, n, x):
    recs = [r for r in records(n, seed)]
    out = swap_unseen_locations(recs, PerturbConfig("unseen_location", proportion=x, seed=seed))
    hit = [b for a, b in zip(recs, out) if b.location in DEFAULT_UNSEEN]
    assert len(hit) == affected_count(n, x)
    assert all(a.record_time == b.record_time and a.scene == b.scene for a, b in zip(recs, out))


def test_unseen_defaults_and_errors():
    assert set(DEFAULT_UNSEEN) == {"Nanchang", "Shenyang", "Guangzhou", "Changchun", "Tianjin", "Taiyuan"}
    with pytest.raises(ValueError):
        swap_unseen_locations(records(3), PerturbConfig("unseen_location", unseen_locations=()))
    with pytest.raises(ValueError):
        PerturbConfig("scramble")
    assert perturb(records(5), PerturbConfig(proportion=0)) == records(5)


# -- metrics ---------------------------------------------------------------

def test_metric_examples():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0 and macro_accuracy([1, 2], [1, 2])[1] == 1.0
    labels = [0] * 9 + [1]
    preds = [0] * 10
    assert accuracy(preds, labels) == pytest.approx(0.9)
    per_class, macro = macro_accuracy(preds, labels)
    assert per_class == {0: 1.0, 1: 0.0} and macro == pytest.approx(0.5)
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ValueError):
        accuracy([1], [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
def test_macro_matches_confusion_matrix(seed, n):
    rng = np.random.default_rng(seed)
    labels, preds = rng.integers(0, 10, n), rng.integers(0, 10, n)
    cm = np.zeros((10, 10))
    for y, p in zip(labels, preds):
        cm[y, p] += 1
    present = cm.sum(axis=1) > 0
    expect = np.mean(np.diag(cm)[present] / cm.sum(axis=1)[present])
    assert macro_accuracy(preds, labels)[1] == pytest.approx(expect, abs=1e-12)
    perm = rng.permutation(n)
    assert accuracy(preds[perm], labels[perm]) == accuracy(preds, labels)


def test_class_report_layout():
    rep = class_report([2, 2, 0], [2, 1, 0], "demo")
    assert rep["system"] == "demo"
    assert rep["per_class"] == {"airport": 100.0, "bar": 0.0, "bus": 100.0}
    assert rep["average"] == pytest.approx(66.67) and rep["accuracy"] == pytest.approx(66.67)
