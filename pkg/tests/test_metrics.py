"""ROC / AUC / TPR@FPR against independent oracles."""
import numpy as np
import pytest

from provsight.errors import DegenerateLabels
from provsight.metrics import auc, evaluate, roc, roc_to_tsv, tpr_at_fpr

# the committed 6-sample fixture
FIX_SCORES = [0.9, 0.8, 0.7, 0.4, 0.3, 0.1]
FIX_LABELS = [1, 1, 0, 1, 0, 0]


def mann_whitney_auc(scores, labels) -> float:
    """Rank-statistic oracle: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def exhaustive_points(scores, labels):
    """All operating points from placing the threshold at every unique score."""
    pos = sum(labels)
    neg = len(labels) - pos
    pts = [(0.0, 0.0)]
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if y == 1 and s >= t)
        fp = sum(1 for s, y in zip(scores, labels) if y == 0 and s >= t)
        pts.append((fp / neg, tp / pos))
    return pts


def test_perfect_separation():
    curve = roc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert any(p.fpr == 0.0 and p.tpr == 1.0 for p in curve.points)
    assert auc(curve) == 1.0


def test_random_scores_near_half():
    rng = np.random.default_rng(42)
    scores = rng.random(20000)
    labels = rng.integers(0, 2, 20000)
    assert abs(auc(roc(scores, labels)) - 0.5) < 0.05


def test_roc_matches_exhaustive_enumeration_on_fixture():
    curve = roc(FIX_SCORES, FIX_LABELS)
    got = [(p.fpr, p.tpr) for p in curve.points]
    assert got == exhaustive_points(FIX_SCORES, FIX_LABELS)


def test_auc_matches_rank_oracle_on_fixture():
    got = auc(roc(FIX_SCORES, FIX_LABELS))
    assert abs(got - mann_whitney_auc(FIX_SCORES, FIX_LABELS)) < 1e-12


def test_auc_matches_rank_oracle_randomized():
    rng = np.random.default_rng(7)
    for _ in range(300):
        n = int(rng.integers(2, 13))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # quantized scores force tie handling
        scores = np.round(rng.random(n), 1)
        got = auc(roc(scores, labels))
        want = mann_whitney_auc(scores.tolist(), labels.tolist())
        assert abs(got - want) < 1e-12


def test_tpr_at_fpr_fixture_hand_trace():
    curve = roc(FIX_SCORES, FIX_LABELS)
    # threshold >= 0.8: tp=2 fp=0 -> the whole zero-FPR prefix
    assert tpr_at_fpr(curve, 0.01) == pytest.approx(2 / 3)
    # fpr 1/3 admits threshold 0.4 (tp=3, fp=1)
    assert tpr_at_fpr(curve, 1 / 3) == pytest.approx(1.0)
    assert tpr_at_fpr(curve, 1.0) == 1.0


def test_tpr_at_fpr_monotone_in_limit():
    rng = np.random.default_rng(3)
    scores = rng.random(50)
    labels = rng.integers(0, 2, 50)
    labels[0], labels[1] = 0, 1
    curve = roc(scores, labels)
    limits = np.linspace(0, 1, 21)
    values = [tpr_at_fpr(curve, float(l)) for l in limits]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_curve_monotone_and_bounded():
    rng = np.random.default_rng(11)
    scores = np.round(rng.random(200), 2)
    labels = rng.integers(0, 2, 200)
    labels[:2] = [0, 1]
    curve = roc(scores, labels)
    assert curve.points[0] == curve.points[0].__class__(0.0, 0.0, float("inf"))
    assert curve.points[-1].fpr == 1.0 and curve.points[-1].tpr == 1.0
    for a, b in zip(curve.points, curve.points[1:]):
        assert b.fpr >= a.fpr and b.tpr >= a.tpr
        assert 0.0 <= b.fpr <= 1.0 and 0.0 <= b.tpr <= 1.0


def test_ties_flip_together():
    curve = roc([0.5, 0.5, 0.5, 0.2], [1, 0, 1, 0])
    # one point covers all three tied scores
    assert [(p.fpr, p.tpr) for p in curve.points] == [(0, 0), (0.5, 1.0), (1.0, 1.0)]


def test_degenerate_labels_rejected():
    with pytest.raises(DegenerateLabels):
        roc([0.1, 0.2], [1, 1])
    with pytest.raises(DegenerateLabels):
        roc([0.1, 0.2], [0, 0])


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        roc([], [])
    with pytest.raises(ValueError):
        roc([0.1, 0.2], [1])
    with pytest.raises(ValueError):
        tpr_at_fpr(roc(FIX_SCORES, FIX_LABELS), 1.5)


def test_evaluate_counts_sum():
    report = evaluate(FIX_SCORES, FIX_LABELS)
    assert report.tp + report.fp + report.tn + report.fn == report.n == 6
    # threshold 0.5 keeps {.9,.8,.7}: tp=2 fp=1 tn=2 fn=1
    assert report.accuracy == pytest.approx(4 / 6)
    assert set(report.tpr_at_fpr) == {1e-1, 1e-2, 1e-3}


def test_roc_tsv_is_parseable():
    text = roc_to_tsv(roc(FIX_SCORES, FIX_LABELS))
    rows = [line.split("\t") for line in text.strip().splitlines()]
    assert rows[0] == ["fpr", "tpr", "threshold"]
    parsed = [(float(a), float(b)) for a, b, _ in rows[1:]]
    assert parsed[0] == (0.0, 0.0) and parsed[-1] == (1.0, 1.0)
