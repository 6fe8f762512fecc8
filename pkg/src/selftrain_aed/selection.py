"""Pseudo-label candidate selection: score, precision and Clarity Index criteria."""

import bisect
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import detectors

POSITIVE = "pseudo_positive"
NEGATIVE = "pseudo_negative"
REJECTED = "rejected"
CRITERIA = ("score", "precision", "clarity")
DEFAULT_CAP = 2000


@dataclass(frozen=True)
class CandidateDecision:
    segment_id: str
    class_name: str
    criterion: str
    value: float
    polarity: str
    iteration: int = 1
    score: float = float("nan")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class ScoreBank:
    pos_train_scores: list  # detector scores of labeled positives
    neg_train_scores: list  # ... and of labeled negatives
    unlabeled_scores: dict = field(default_factory=dict)  # segment id -> score

    def __post_init__(self):
        self._pos_sorted = sorted(self.pos_train_scores)
        self._neg_sorted = sorted(self.neg_train_scores)


def _check_thresholds(theta_pos, theta_neg, lo, hi):
    if not (lo <= theta_neg < theta_pos <= hi):
        raise ValueError(
            f"need {lo} <= theta_neg < theta_pos <= {hi}, got ({theta_neg}, {theta_pos})")


def _assemble(values, scores, pos_ok, neg_ok, criterion, cap, class_name, iteration):
    """Turn per-segment eligibility into decisions, capped by extremity.

    Positives are ranked by descending value, negatives by ascending value;
    ties break on segment id. A segment eligible for both sides is only
    considered positive.
    """
    ids = sorted(values)
    pos = [u for u in ids if pos_ok[u]]
    neg = [u for u in ids if neg_ok[u] and not pos_ok[u]]
    pos.sort(key=lambda u: -values[u])  # stable over the id order
    neg.sort(key=lambda u: values[u])
    polarity = {u: REJECTED for u in ids}
    for u in pos[:cap]:
        polarity[u] = POSITIVE
    for u in neg[:cap]:
        polarity[u] = NEGATIVE
    return [CandidateDecision(u, class_name, criterion, float(values[u]), polarity[u],
                              iteration, float(scores[u])) for u in ids]


def select_by_score(bank, theta_pos=0.95, theta_neg=0.05, cap=DEFAULT_CAP, *,
                    class_name="", iteration=1):
    _check_thresholds(theta_pos, theta_neg, 0.0, 1.0)
    s = bank.unlabeled_scores
    return _assemble(s, s, {u: v >= theta_pos for u, v in s.items()},
                     {u: v <= theta_neg for u, v in s.items()},
                     "score", cap, class_name, iteration)


class PrecisionCurve:
    """Step function from a score threshold to held-out precision.

    ``curve(s)`` is the interpolated precision at the largest held-out
    threshold not above ``s``: the best precision reachable with any
    threshold at or below it, so the curve never rises as recall grows.
    """

    def __init__(self, thresholds, precision, raw_precision=None):
        self.thresholds = np.asarray(thresholds, dtype=np.float64)
        self.precision = np.asarray(precision, dtype=np.float64)
        self.raw_precision = self.precision if raw_precision is None else np.asarray(raw_precision)

    def __call__(self, s):
        i = np.searchsorted(self.thresholds, s, side="right") - 1
        i = np.clip(i, 0, len(self.thresholds) - 1)
        out = self.precision[i]
        return float(out) if np.ndim(out) == 0 else out


def precision_curve_from_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not (labels == 1).any() or not (labels == 0).any():
        raise ValueError("held-out set must contain both classes")
    thresholds = np.unique(scores)
    order = np.sort(scores)
    pos_sorted = np.sort(scores[labels == 1])
    # points scoring >= t
    n_at_least = len(scores) - np.searchsorted(order, thresholds, side="left")
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, thresholds, side="left")
    raw = tp / n_at_least
    return PrecisionCurve(thresholds, np.maximum.accumulate(raw), raw)


def estimate_precision_curve(det, heldout, negative=False):
    """Precision-at-score curve of ``det`` on held-out labeled data.

    With ``negative=True`` the curve is for the complementary detector: the
    negative class is the target and ``1 - score`` the score.
    """
    X, y, _ = detectors.as_arrays(heldout)
    s = detectors.score_many(det, X)
    if negative:
        return precision_curve_from_scores(1.0 - s, 1 - y)
    return precision_curve_from_scores(s, y)


def select_by_precision(bank, curve, tau=0.95, cap=DEFAULT_CAP, neg_curve=None, *,
                        tau_neg=None, class_name="", iteration=1):
    """Positive iff ``curve(score) >= tau``.

    Negatives are chosen symmetrically when ``neg_curve`` is given:
    ``neg_curve(1 - score) >= tau_neg`` (``tau_neg`` defaults to ``tau``).
    """
    tau_neg = tau if tau_neg is None else tau_neg
    for t in (tau, tau_neg):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"precision threshold must lie in [0, 1], got {t}")
    s = bank.unlabeled_scores
    pos_ok = {u: curve(v) >= tau for u, v in s.items()}
    if neg_curve is None:
        neg_ok = {u: False for u in s}
    else:
        neg_ok = {u: neg_curve(1.0 - v) >= tau_neg for u, v in s.items()}
    out = _assemble(s, s, pos_ok, neg_ok, "precision", cap, class_name, iteration)
    # ranked by score; the recorded statistic is the precision that qualified it
    return [replace(d, value=float(neg_curve(1.0 - d.score) if d.polarity == NEGATIVE
                                   else curve(d.score))) for d in out]


def clarity_of_score(bank, f_u):
    # RL counts positives strictly above f(u), IL negatives strictly below; ties count 0
    n0, n1 = len(bank._pos_sorted), len(bank._neg_sorted)
    if n0 == 0 or n1 == 0:
        raise ValueError("clarity index needs labeled positive and negative scores")
    rl_count = n0 - bisect.bisect_right(bank._pos_sorted, f_u)
    il_count = bisect.bisect_left(bank._neg_sorted, f_u)
    # one division keeps hand-countable cases exact, e.g. 2/3 - 1/2 == 1/6
    return (il_count * n0 - rl_count * n1) / (n0 * n1)


def clarity_index(bank, u):
    """CI = IL - RL of unlabeled segment ``u``, in [-1, 1]."""
    if u not in bank.unlabeled_scores:
        raise KeyError(f"unknown segment id {u!r}")
    return clarity_of_score(bank, bank.unlabeled_scores[u])


def select_by_clarity(bank, theta_pos=0.9, theta_neg=-0.9, cap=DEFAULT_CAP, *,
                      class_name="", iteration=1):
    _check_thresholds(theta_pos, theta_neg, -1.0, 1.0)
    ci = {u: clarity_of_score(bank, v) for u, v in bank.unlabeled_scores.items()}
    return _assemble(ci, bank.unlabeled_scores, {u: v >= theta_pos for u, v in ci.items()},
                     {u: v <= theta_neg for u, v in ci.items()},
                     "clarity", cap, class_name, iteration)


def accepted(decisions):
    return [d for d in decisions if d.polarity != REJECTED]
