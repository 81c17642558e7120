import json
from fractions import Fraction

import numpy as np
import pytest

from lesionkit.classification import ClassScores
from lesionkit.exceptions import ShapeError, UndefinedMetricError
from lesionkit.metrics import (
    ClsResult,
    SegResult,
    audit_average,
    auc,
    average_auc,
    evaluate_cls,
    evaluate_seg,
    format_percent,
    jaccard,
    to_json,
)


def jaccard_brute(a, b):
    inter = union = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += x and y
        union += x or y
    return 1.0 if union == 0 else inter / union


def auc_brute(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = Fraction(0)
    for p in pos:
        for n in neg:
            wins += 1 if p > n else Fraction(1, 2) if p == n else 0
    return wins / (len(pos) * len(neg))


# ------------------------------------------------------------------ jaccard


def test_jaccard_examples():
    m = np.zeros((4, 4), bool)
    m[:2] = True
    assert jaccard(m, m) == 1.0
    assert jaccard(m, ~m) == 0.0
    a = np.zeros(10, bool)
    b = np.zeros(10, bool)
    a[0:6] = True
    b[4:8] = True
    assert jaccard(a, b) == 0.25
    assert jaccard(np.zeros(3, bool), np.zeros(3, bool)) == 1.0
    with pytest.raises(ShapeError):
        jaccard(np.zeros(3), np.zeros(4))


def test_jaccard_matches_enumeration():
    r = np.random.default_rng(0)
    for _ in range(1000):
        n = int(r.integers(1, 201))
        a = r.random(n) < r.random()
        b = r.random(n) < r.random()
        assert jaccard(a, b) == jaccard_brute(a, b)


# ---------------------------------------------------------------------- auc


def test_auc_examples():
    assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert auc([0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0]) == 0.75


def test_auc_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


def test_auc_matches_enumeration():
    r = np.random.default_rng(1)
    checked = 0
    while checked < 1000:
        n = int(r.integers(2, 201))
        # coarse grid forces plenty of ties
        scores = r.integers(0, int(r.integers(2, 20)), n) / 4
        labels = r.random(n) < r.random()
        if labels.all() or not labels.any():
            continue
        expected = auc_brute(scores.tolist(), labels.tolist())
        assert auc(scores, labels) == float(expected)
        checked += 1


# ----------------------------------------------------------- averages/reports


def test_average_auc_table_rows():
    assert format_percent(average_auc(84.30, 96.90), True) == "90.60"
    assert format_percent(average_auc(85.40, 97.60), True) == "91.50"
    assert average_auc(0.7, 0.7) == 0.7


def test_binary_row_discrepancy_flagged():
    assert format_percent(average_auc(85.50, 97.00), True) == "91.25"
    audit = audit_average(85.50, 97.00, 91.30)
    assert not audit.consistent
    assert "DISCREPANCY" in audit.note() and "91.30" in audit.note() and "91.25" in audit.note()
    assert audit_average(84.30, 96.90, 90.60).consistent


def test_average_auc_mixed_units_rejected():
    with pytest.raises(ValueError):
        average_auc(0.85, 97.0)


def test_format_percent_half_up():
    assert format_percent(0.12345) == "12.35"
    assert format_percent(91.125, True) == "91.13"
    assert format_percent(1.0) == "100.00"


def test_seg_means():
    truth = {"a": np.ones((3, 3), bool), "b": np.eye(3, dtype=bool)}
    assert format_percent(evaluate_seg(truth, truth).mean_jaccard) == "100.00"
    assert format_percent(SegResult({"x": 0.25}).mean_jaccard) == "25.00"
    assert format_percent(SegResult({"x": 0.5, "y": 0.6, "z": 0.7}).mean_jaccard) == "60.00"


def test_seg_ids_must_match():
    truth = {"a": np.ones((2, 2), bool)}
    with pytest.raises(KeyError):
        evaluate_seg({}, truth)
    with pytest.raises(KeyError):
        evaluate_seg({"a": truth["a"], "b": truth["a"]}, truth)


def test_cls_perfect_and_tied():
    labels = ["melanoma", "seborrheic_keratosis", "nevus", "melanoma", "nevus"]
    onehot = np.eye(3)[[0, 1, 2, 0, 2]]
    r = evaluate_cls(onehot, labels)
    assert format_percent(r.melanoma_auc) == format_percent(r.sk_auc) == "100.00"
    r = evaluate_cls(np.full((5, 3), 0.4), labels)
    assert format_percent(r.melanoma_auc) == format_percent(r.sk_auc) == "50.00"


def test_cls_hand_case_one_inversion():
    labels = ["melanoma", "melanoma", "nevus", "seborrheic_keratosis"]
    p_mel = [0.9, 0.3, 0.5, 0.1]  # second melanoma ranks below the nevus
    scores = np.column_stack([p_mel, [0.1, 0.2, 0.3, 0.8], [0.0] * 4])
    r = evaluate_cls(scores, labels)
    assert r.melanoma_auc == float(auc_brute(p_mel, [1, 1, 0, 0])) == 0.75
    assert r.sk_auc == 1.0


def test_cls_accepts_class_scores():
    rows = [ClassScores(0.8, 0.1, 0.1, "m"), ClassScores(0.2, 0.7, 0.1, "m"),
            ClassScores(0.1, 0.1, 0.8, "m")]
    r = evaluate_cls(rows, ["melanoma", "seborrheic_keratosis", "nevus"])
    assert r.melanoma_auc == r.sk_auc == 1.0


def test_reports_render_and_serialize():
    seg = SegResult({"b": 0.5, "a": 0.75})
    text = seg.render("ResNet-Seg", "Yes")
    assert "62.50" in text and "Jaccard" in text and "ResNet-Seg" in text
    doc = json.loads(to_json(seg))
    assert doc["mean_jaccard"] == 0.625 and doc["n_images"] == 2
    cls = ClsResult(0.843, 0.969)
    assert "90.60" in cls.render()
    assert set(json.loads(to_json(cls))) == {"melanoma_auc", "sk_auc", "average_auc"}
