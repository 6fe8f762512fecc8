from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selftrain_aed import detectors, selection
from selftrain_aed.selection import (
    NEGATIVE,
    POSITIVE,
    REJECTED,
    ScoreBank,
    accepted,
    clarity_index,
    estimate_precision_curve,
    precision_curve_from_scores,
    select_by_clarity,
    select_by_precision,
    select_by_score,
)


def _polarities(decisions):
    return {d.segment_id: d.polarity for d in decisions}


def _ci_oracle(pos, neg, f):
    # direct transcription of the two indicator sums, in exact arithmetic
    rl = Fraction(sum(1 for x in pos if x - f > 0), len(pos))
    il = Fraction(sum(1 for x in neg if f - x > 0), len(neg))
    return il - rl


# --- score threshold --------------------------------------------------------------

def test_select_by_score_hand_example():
    bank = ScoreBank([0.9], [0.1], {"a": 0.96, "b": 0.50, "c": 0.03})
    assert _polarities(select_by_score(bank)) == {"a": POSITIVE, "b": REJECTED, "c": NEGATIVE}


def test_select_by_score_theta_one():
    bank = ScoreBank([0.9], [0.1], {f"u{i}": 0.999 for i in range(5)})
    assert not [d for d in select_by_score(bank, 1.0, 0.05) if d.polarity == POSITIVE]


def test_select_by_score_invalid_thresholds():
    bank = ScoreBank([0.9], [0.1], {"a": 0.5})
    for hi, lo in [(0.5, 0.5), (0.4, 0.6), (1.1, 0.0), (0.9, -0.1)]:
        with pytest.raises(ValueError):
            select_by_score(bank, hi, lo)


def test_cap_and_tie_break():
    scores = {"d": 0.99, "b": 0.97, "a": 0.97, "c": 0.96, "e": 0.01, "f": 0.01, "g": 0.02}
    dec = select_by_score(ScoreBank([0.9], [0.1], scores), cap=2)
    pol = _polarities(dec)
    assert [u for u in sorted(pol) if pol[u] == POSITIVE] == ["a", "d"]
    assert [u for u in sorted(pol) if pol[u] == NEGATIVE] == ["e", "f"]
    assert pol["b"] == pol["c"] == pol["g"] == REJECTED


def test_select_by_score_large_pool_counts():
    # a 200k pool with strict thresholds stays within 0..2000 per polarity
    rng = np.random.default_rng(0)
    scores = {f"u{i:06d}": float(s) for i, s in enumerate(rng.beta(0.5, 3.0, 200_000))}
    dec = accepted(select_by_score(ScoreBank([0.9], [0.1], scores)))
    n_pos = sum(d.polarity == POSITIVE for d in dec)
    n_neg = sum(d.polarity == NEGATIVE for d in dec)
    assert 0 <= n_pos <= 2000 and 0 <= n_neg <= 2000


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=4),
                       st.floats(0, 1), min_size=1, max_size=30),
       st.integers(0, 10))
def test_selection_deterministic_and_disjoint(scores, cap):
    bank = ScoreBank([0.5], [0.4], scores)
    for run in (lambda: select_by_score(bank, 0.8, 0.2, cap),
                lambda: select_by_clarity(bank, 0.9, -0.9, cap)):
        a, b = run(), run()
        assert a == b
        assert len({d.segment_id for d in a}) == len(a) == len(scores)
        assert sum(d.polarity == POSITIVE for d in a) <= cap
        assert sum(d.polarity == NEGATIVE for d in a) <= cap


# --- precision curve ---------------------------------------------------------------

def test_precision_curve_hand_count():
    curve = precision_curve_from_scores([0.9, 0.7, 0.8], [1, 1, 0])
    assert curve(0.9) == 1.0
    assert curve(0.7) == pytest.approx(2 / 3, abs=1e-15)
    assert curve(0.95) == 1.0


def test_precision_curve_selection_hand_count():
    curve = precision_curve_from_scores([0.9, 0.7, 0.8], [1, 1, 0])
    scores = {"a": 0.95, "b": 0.9, "c": 0.85, "d": 0.75, "e": 0.5}
    pol = _polarities(select_by_precision(ScoreBank([0.9], [0.1], scores), curve, 0.95))
    assert {u for u, p in pol.items() if p == POSITIVE} == {"a", "b"}


def test_precision_curve_perfectly_separated():
    curve = precision_curve_from_scores([0.9, 0.8, 0.7, 0.3, 0.2], [1, 1, 1, 0, 0])
    # evaluated at the held-out thresholds above the top negative, and beyond
    for s in (0.7, 0.8, 0.9, 0.99):
        assert curve(s) == 1.0
    assert curve(0.3) == 0.75


def test_precision_curve_non_increasing_in_recall():
    rng = np.random.default_rng(1)
    s = rng.random(200)
    y = (rng.random(200) < s).astype(int)
    curve = precision_curve_from_scores(s, y)
    assert np.all(np.diff(curve.precision) >= 0)
    assert np.all(curve.precision >= curve.raw_precision)


def test_precision_curve_errors():
    with pytest.raises(ValueError):
        precision_curve_from_scores([0.1, 0.2], [0, 0])


def test_precision_tau_zero_selects_all_capped():
    curve = precision_curve_from_scores([0.9, 0.7, 0.8], [1, 1, 0])
    scores = {f"u{i}": float(v) for i, v in enumerate(np.linspace(0, 1, 20))}
    dec = select_by_precision(ScoreBank([0.9], [0.1], scores), curve, 0.0)
    assert all(d.polarity == POSITIVE for d in dec)
    dec = select_by_precision(ScoreBank([0.9], [0.1], scores), curve, 0.0, cap=5)
    assert sum(d.polarity == POSITIVE for d in dec) == 5
    with pytest.raises(ValueError):
        select_by_precision(ScoreBank([0.9], [0.1], scores), curve, 1.5)


def test_precision_selection_on_calibrated_corpus(calibrated_split):
    sp = calibrated_split
    fit = np.flatnonzero(sp.folds <= 8)
    held = np.flatnonzero(sp.folds == 9)
    total = correct = 0
    for cls in sp.classes:
        det = detectors.train_svm(sp.records(fit, cls), seed=0)
        s = detectors.score_many(det, sp.X[fit])
        pos = sp.labels[fit] == cls
        bank = ScoreBank(s[pos].tolist(), s[~pos].tolist(),
                         dict(zip(sp.pool.ids, detectors.score_many(det, sp.PX).tolist())))
        curve = estimate_precision_curve(det, sp.records(held, cls))
        picked = [d for d in select_by_precision(bank, curve, 0.95) if d.polarity == POSITIVE]
        total += len(picked)
        correct += sum(sp.truth(d.segment_id) == cls for d in picked)
    assert total > 0
    assert correct / total >= 0.9


# --- clarity index -------------------------------------------------------------------

def test_clarity_hand_examples():
    pos, neg = [0.9, 0.6], [0.2, 0.5, 0.7]
    bank = ScoreBank(pos, neg, {"top": 0.95, "bottom": 0.1, "mid": 0.65})
    assert clarity_index(bank, "top") == 1
    assert clarity_index(bank, "bottom") == -1
    assert clarity_index(bank, "mid") == 1 / 6
    assert Fraction(clarity_index(bank, "mid")).limit_denominator(100) == Fraction(1, 6)


def test_clarity_ties_and_unknown():
    bank = ScoreBank([0.5, 0.5], [0.5], {"u": 0.5})
    assert clarity_index(bank, "u") == 0.0
    with pytest.raises(KeyError):
        clarity_index(bank, "nope")
    with pytest.raises(ValueError):
        clarity_index(ScoreBank([], [0.1], {"u": 0.3}), "u")


@settings(max_examples=200, deadline=None)
@given(pos=st.lists(st.floats(0, 1), min_size=1, max_size=20),
       neg=st.lists(st.floats(0, 1), min_size=1, max_size=20),
       f=st.floats(0, 1))
def test_clarity_matches_oracle(pos, neg, f):
    ci = clarity_index(ScoreBank(pos, neg, {"u": f}), "u")
    assert -1.0 <= ci <= 1.0
    assert ci == float(_ci_oracle(pos, neg, f))


def test_clarity_rank_invariance():
    rng = np.random.default_rng(2)
    pos, neg, unl = rng.random(15), rng.random(40), rng.random(30)
    base = ScoreBank(pos.tolist(), neg.tolist(), {f"u{i}": v for i, v in enumerate(unl)})
    ref = {u: clarity_index(base, u) for u in base.unlabeled_scores}
    for _ in range(100):
        a, b = rng.uniform(0.1, 5), rng.uniform(-2, 2)
        kind = rng.integers(3)
        g = [lambda x: a * x + b, lambda x: np.exp(a * x), lambda x: x ** 3 + a * x][kind]
        bank = ScoreBank(g(pos).tolist(), g(neg).tolist(),
                         {u: float(g(v)) for u, v in base.unlabeled_scores.items()})
        assert {u: clarity_index(bank, u) for u in bank.unlabeled_scores} == ref


def test_select_by_clarity_examples():
    pos, neg = [0.9, 0.6], [0.2, 0.5, 0.7]
    pol = _polarities(select_by_clarity(ScoreBank(pos, neg, {"top": 0.95})))
    assert pol == {"top": POSITIVE}
    low = ScoreBank(pos, neg, {f"u{i}": 0.01 * i for i in range(10)})
    assert not [d for d in select_by_clarity(low) if d.polarity == POSITIVE]
    with pytest.raises(ValueError):
        select_by_clarity(low, 0.5, 0.6)


def test_loose_clarity_threshold_is_noisier(default_split):
    sp = default_split
    fit = np.flatnonzero(sp.folds != 10)
    noise = {}
    for theta in (0.5, 0.9):
        total = wrong = 0
        for cls in sp.classes:
            det = detectors.train_svm(sp.records(fit, cls), seed=0)
            s = detectors.score_many(det, sp.X[fit])
            pos = sp.labels[fit] == cls
            bank = ScoreBank(s[pos].tolist(), s[~pos].tolist(),
                             dict(zip(sp.pool.ids, detectors.score_many(det, sp.PX).tolist())))
            for d in accepted(select_by_clarity(bank, theta, -0.9)):
                total += 1
                wrong += (sp.truth(d.segment_id) == cls) != (d.polarity == POSITIVE)
        noise[theta] = wrong / total
    assert noise[0.5] > noise[0.9], noise


def test_decision_json():
    d = selection.CandidateDecision("u#0", "siren", "clarity", 0.95, POSITIVE, 2, 0.99)
    assert '"polarity": "pseudo_positive"' in d.to_json()
