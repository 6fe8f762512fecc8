import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selftrain_aed.evaluation import (
    EvalReport,
    EvaluationError,
    average_precision,
    build_report,
    diff_reports,
    format_diff,
    format_table,
)

# reference per-class AP (percent) for a 10-class corpus, baseline and best columns
CLASSES = ["air_conditioner", "car_horn", "children_playing", "dog_bark", "drilling",
           "engine_idling", "gun_shot", "jackhammer", "siren", "street_music"]
TABLE = {
    "svm_baseline": [39.3, 52.4, 53.8, 76.2, 56.6, 53.8, 67.8, 60.2, 72.2, 46.0],
    "svm_best": [45.1, 53.0, 54.3, 75.9, 57.2, 54.1, 69.1, 62.3, 72.8, 46.4],
    "nn_baseline": [49.9, 51.6, 65.1, 81.7, 63.4, 68.0, 80.4, 63.7, 80.2, 58.5],
    "nn_best": [53.2, 52.8, 65.2, 82.0, 63.0, 69.8, 81.9, 66.2, 80.4, 59.0],
}
REFERENCE_MEAN = {"svm_baseline": 57.8, "svm_best": 59.0, "nn_baseline": 66.3, "nn_best": 67.5}


def _table_report(column):
    return build_report({c: {1: v / 100} for c, v in zip(CLASSES, TABLE[column])})


def brute_force_ap(scores, labels):
    """Enumerate the ranking explicitly: sort on (-score, position)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    precisions = []
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / hits


# --- average precision --------------------------------------------------------

def test_ap_perfect_ranking():
    assert average_precision([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0


def test_ap_hand_example():
    ap = average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
    assert ap == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)


def test_ap_errors():
    with pytest.raises(EvaluationError, match="no positives"):
        average_precision([0.1, 0.2], [0, 0])
    with pytest.raises(EvaluationError, match="length mismatch"):
        average_precision([0.1, 0.2], [1])


def test_ap_tie_rule_and_count():
    # equal scores: the earlier position ranks first
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5
    _, ties = average_precision([0.5, 0.5, 0.5, 0.1], [0, 1, 0, 1], return_ties=True)
    assert ties == 2


def test_ap_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        n = int(rng.integers(1, 51))
        scores = rng.integers(0, 8, n) / 7.0  # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        if labels.sum() == 0:
            labels[rng.integers(n)] = 1
        assert average_precision(scores, labels) == brute_force_ap(scores.tolist(), labels.tolist())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-1000, 1000), st.integers(0, 1)), min_size=1, max_size=40)
       .filter(lambda xs: any(y for _, y in xs)))
def test_ap_invariant_under_monotone_transform(items):
    # integer scores keep every transform exact, hence strictly increasing
    s = np.array([x for x, _ in items], dtype=np.float64)
    y = np.array([t for _, t in items])
    ap = average_precision(s, y)
    assert 0.0 < ap <= 1.0
    for g in (lambda x: 3 * x + 7, lambda x: x ** 3, lambda x: np.exp(x / 100)):
        assert average_precision(g(s), y) == ap


def test_ap_duplicated_list_documented_rule():
    # with distinct scores, each duplicate pair is adjacent in the ranking and
    # the doubled list has the AP computed by the oracle under the same rule
    rng = np.random.default_rng(3)
    s = rng.permutation(20) / 20.0
    y = rng.integers(0, 2, 20)
    y[0] = 1
    s2, y2 = np.r_[s, s], np.r_[y, y]
    assert average_precision(s2, y2) == brute_force_ap(s2.tolist(), y2.tolist())


# --- reports ---------------------------------------------------------------------

def test_build_report_trivial():
    assert build_report({"a": {1: 0.5}}).mean_ap == 0.5
    rep = build_report({"a": {1: 0.3, 2: 0.5}, "b": {1: 0.6}})
    assert rep.class_means == {"a": 0.4, "b": 0.6}
    assert rep.mean_ap == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(EvaluationError):
        build_report({})
    with pytest.raises(EvaluationError):
        build_report({"a": {1: 1.5}})


def test_report_mean_identity_and_roundtrip():
    rng = np.random.default_rng(4)
    per = {f"c{i}": {k: float(rng.random()) for k in range(1, 11)} for i in range(10)}
    rep = build_report(per, {k: 87 for k in range(1, 11)})
    assert abs(rep.mean_ap - np.mean([np.mean(list(f.values())) for f in per.values()])) < 1e-12
    again = EvalReport.from_dict(rep.to_dict())
    assert again.to_json() == rep.to_json()


@pytest.mark.parametrize("column", sorted(TABLE))
def test_table_means(column):
    rep = _table_report(column)
    expected = {"nn_best": 0.6735}.get(column, REFERENCE_MEAN[column] / 100)
    assert rep.mean_ap == pytest.approx(expected, abs=0.0006)


def test_table_nn_best_row_mean():
    # the class rows average to 67.35 although the reference Mean AP row reads 67.5
    assert round(100 * _table_report("nn_best").mean_ap, 2) == 67.35


def test_diff_svm_baseline_vs_best():
    d = diff_reports(_table_report("svm_baseline"), _table_report("svm_best"))
    assert 100 * d.mean_ap == pytest.approx(1.2, abs=0.05)
    assert 100 * d.per_class["dog_bark"] == pytest.approx(-0.3, abs=1e-9)
    assert d.regressions == ["dog_bark"]


def test_diff_nn_baseline_vs_best():
    d = diff_reports(_table_report("nn_baseline"), _table_report("nn_best"))
    assert 100 * d.mean_ap == pytest.approx(1.1, abs=0.05)
    assert d.regressions == ["drilling"]


def test_diff_identical_and_mismatch():
    a = _table_report("svm_baseline")
    d = diff_reports(a, a)
    assert d.mean_ap == 0 and all(v == 0 for v in d.per_class.values()) and not d.regressions
    with pytest.raises(EvaluationError, match="class sets differ"):
        diff_reports(a, build_report({"x": {1: 0.5}}))


def test_text_table_layout():
    a, b = _table_report("svm_baseline"), _table_report("svm_best")
    text = format_table({"SVM Baseline": a, "SVM Best": b})
    assert "Mean AP" in text and "dog_bark" in text
    assert "57.8" in text and "59.0" in text
    diff = format_diff(a, b, ("base", "best"))
    dog = next(line for line in diff.splitlines() if line.startswith("dog_bark"))
    assert dog.rstrip().endswith("-0.3 *")
