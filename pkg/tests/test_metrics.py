import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ingra.errors import DataError
from ingra.metrics import (EvalReport, average_precision, mean_std, roc_auc, score_individual,
                           score_structures)


def brute_ap(scores, labels):
    """Precision at every recall step, in exact arithmetic."""
    ranking = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(labels)
    total = Fraction(0)
    for k in range(1, len(ranking) + 1):
        top = ranking[:k]
        recall_step = Fraction(labels[ranking[k - 1]], n_pos)
        total += Fraction(sum(labels[i] for i in top), k) * recall_step
    return float(total)


def brute_auc(scores, labels):
    wins, pairs = Fraction(0), 0
    for i, j in itertools.product(range(len(scores)), repeat=2):
        if labels[i] == 1 and labels[j] == 0:
            pairs += 1
            wins += 1 if scores[i] > scores[j] else Fraction(1, 2) if scores[i] == scores[j] else 0
    return float(wins / pairs)


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0
    assert average_precision([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([0.3], [1]) == 1.0


def test_ap_needs_a_positive():
    with pytest.raises(DataError):
        average_precision([0.1, 0.2], [0, 0])


def test_ap_ties_follow_index_order():
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0


def test_auc_examples():
    assert roc_auc([0.9, 0.1], [1, 0]) == 1.0
    assert roc_auc([0.2, 0.8], [1, 0]) == 0.0
    assert roc_auc([0.4, 0.4, 0.4], [1, 0, 1]) == 0.5


def test_auc_single_class_is_error():
    with pytest.raises(DataError):
        roc_auc([0.1, 0.2], [1, 1])


def test_metrics_match_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 13))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0], labels[-1] = 1, 0
        # coarse grid so ties are common
        scores = rng.integers(0, 4, size=n) / 4.0
        assert average_precision(scores, labels) == brute_ap(scores.tolist(), labels.tolist())
        assert roc_auc(scores, labels) == brute_auc(scores.tolist(), labels.tolist())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=2, max_size=12),
       st.floats(0.1, 10), st.floats(-5, 5))
def test_metrics_invariant_to_monotone_rescaling(pairs, scale, shift):
    scores = np.array([p[0] / 20 for p in pairs])
    labels = np.array([p[1] for p in pairs])
    if labels.sum() in (0, labels.size):
        return
    moved = scores * scale + shift
    # rescaling can merge or split floating-point ties; only compare when ranks agree
    if not np.array_equal(np.argsort(-scores, kind="stable"), np.argsort(-moved, kind="stable")):
        return
    if not np.array_equal(scores[:, None] == scores[None, :], moved[:, None] == moved[None, :]):
        return
    assert average_precision(moved, labels) == pytest.approx(average_precision(scores, labels))
    assert roc_auc(moved, labels) == pytest.approx(roc_auc(scores, labels))
    assert 0.0 <= average_precision(scores, labels) <= 1.0
    assert roc_auc(1.0 - scores, labels) == pytest.approx(1.0 - roc_auc(scores, labels))


def test_score_structures_drops_target_entry():
    report = score_structures(["a"], [np.array([0.9, 0.0, 0.6, 0.4])], [np.array([0, 1, 1])])
    row = report.rows[0]
    assert row.scores == [0.0, 0.6, 0.4]
    assert row.ap == 1.0 and row.auc == 1.0


def test_uniform_attention_auc_half():
    report = score_structures(["a"], [np.full(5, 0.2)], [np.array([1, 0, 1, 0])])
    assert report.rows[0].auc == 0.5


def test_aggregates_match_scratch():
    truths = [np.array([1, 0, 0]), np.array([1, 1, 0]), np.array([0, 0, 1])]
    attention = [np.array([0.1, 0.5, 0.3, 0.1]), np.array([0.1, 0.1, 0.2, 0.6]),
                 np.array([0.4, 0.2, 0.2, 0.2])]
    report = score_structures(["a", "b", "c"], attention, truths, split="train")
    aps = [1.0, (1 / 2 + 2 / 3) / 2, 1 / 3]
    aucs = [1.0, 0.0, 0.5]
    m = sum(aps) / 3
    assert report.ap == pytest.approx((m, (sum((v - m) ** 2 for v in aps) / 3) ** 0.5))
    m = sum(aucs) / 3
    assert report.auc == pytest.approx((m, (sum((v - m) ** 2 for v in aucs) / 3) ** 0.5))
    assert report.summary().startswith("train: AP ")


def test_missing_ground_truth():
    with pytest.raises(DataError):
        score_structures(["a"], [np.ones(3) / 3], [None])


def test_report_files(tmp_path):
    report = EvalReport("unseen", [score_individual("x", [0.7, 0.1, 0.2], [1, 0, 0])],
                        metadata={"seed": 1}, skipped={"y": "too short"})
    report.write_json(tmp_path / "r.json")
    report.write_csv(tmp_path / "r.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["aggregate"]["ap_mean"] == 1.0 and data["skipped"] == {"y": "too short"}
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "id,ap,auc,scores,ground_truth"


def test_mean_std_population():
    assert mean_std([1.0, 3.0]) == (2.0, 1.0)
