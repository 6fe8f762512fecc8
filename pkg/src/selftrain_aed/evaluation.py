"""Average precision, per-class/fold reports and report diffs."""

import json
import math
from dataclasses import dataclass, field

import numpy as np


class EvaluationError(ValueError):
    pass


def ranking(scores):
    """Descending-score order; ties keep original order."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.argsort(-scores, kind="stable")


def count_ties(scores):
    _, counts = np.unique(np.asarray(scores, dtype=np.float64), return_counts=True)
    return int((counts[counts > 1] - 1).sum())


def average_precision(scores, labels, return_ties=False):
    """Mean of precision@k over the ranks k of the positives.

    Ranking is by descending score, ties broken by original position.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise EvaluationError(f"length mismatch: {scores.shape} vs {labels.shape}")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise EvaluationError("no positives")
    hits = (labels[ranking(scores)] == 1)
    ranks = np.flatnonzero(hits) + 1
    # fsum: correctly rounded, so the result does not depend on summation order
    ap = math.fsum((np.arange(1, n_pos + 1) / ranks).tolist()) / n_pos
    if return_ties:
        return ap, count_ties(scores)
    return ap


@dataclass
class EvalReport:
    per_class_ap: dict  # class -> {fold: AP}
    class_means: dict
    mean_ap: float
    num_test_items: dict = field(default_factory=dict)  # fold -> count

    @property
    def classes(self):
        return sorted(self.per_class_ap)

    def to_dict(self):
        return {
            "per_class_ap": {c: {str(k): v for k, v in sorted(folds.items())}
                             for c, folds in sorted(self.per_class_ap.items())},
            "class_means": dict(sorted(self.class_means.items())),
            "mean_ap": self.mean_ap,
            "num_test_items": {str(k): v for k, v in sorted(self.num_test_items.items())},
        }

    @classmethod
    def from_dict(cls, d):
        per = {c: {int(k): v for k, v in folds.items()} for c, folds in d["per_class_ap"].items()}
        return cls(per, dict(d["class_means"]), d["mean_ap"],
                   {int(k): v for k, v in d.get("num_test_items", {}).items()})

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def table(self, title="AP"):
        return format_table({title: self})


def build_report(per_class_fold_ap, num_test_items=None):
    """Aggregate ``{class: {fold: AP}}``: fold mean per class, then mean over classes."""
    if not per_class_fold_ap or not any(per_class_fold_ap.values()):
        raise EvaluationError("empty input")
    per = {}
    means = {}
    for cls, folds in per_class_fold_ap.items():
        if not folds:
            raise EvaluationError(f"class {cls!r} has no fold results")
        folds = {int(k): float(v) for k, v in folds.items()}
        for k, v in folds.items():
            if not 0.0 <= v <= 1.0:
                raise EvaluationError(f"AP {v} for {cls!r} fold {k} outside [0, 1]")
        per[cls] = dict(sorted(folds.items()))
        means[cls] = float(np.mean(list(per[cls].values())))
    mean_ap = float(np.mean([means[c] for c in sorted(means)]))
    return EvalReport(per, means, mean_ap, dict(num_test_items or {}))


@dataclass
class ReportDiff:
    per_class: dict  # class -> delta (b - a)
    mean_ap: float
    regressions: list

    def to_dict(self):
        return {"per_class": dict(sorted(self.per_class.items())), "mean_ap": self.mean_ap,
                "regressions": list(self.regressions)}


def diff_reports(a, b):
    if set(a.class_means) != set(b.class_means):
        raise EvaluationError(
            f"class sets differ: {sorted(set(a.class_means) ^ set(b.class_means))}")
    per = {c: b.class_means[c] - a.class_means[c] for c in sorted(a.class_means)}
    return ReportDiff(per, b.mean_ap - a.mean_ap, [c for c, d in per.items() if d < 0])


def format_table(columns, percent=True):
    """Aligned text table: one row per class plus a Mean AP row."""
    names = list(columns)
    classes = sorted(next(iter(columns.values())).class_means)
    scale = 100.0 if percent else 1.0
    width = max([len("Mean AP")] + [len(c) for c in classes]) + 2
    colw = max(8, max(len(n) for n in names) + 2)
    lines = ["Category".ljust(width) + "".join(n.rjust(colw) for n in names)]
    lines.append("-" * len(lines[0]))
    for c in classes:
        lines.append(c.ljust(width) + "".join(
            f"{columns[n].class_means[c] * scale:{colw}.1f}" for n in names))
    lines.append("-" * len(lines[0]))
    lines.append("Mean AP".ljust(width) + "".join(
        f"{columns[n].mean_ap * scale:{colw}.1f}" for n in names))
    return "\n".join(lines) + "\n"


def format_diff(a, b, names=("A", "B")):
    d = diff_reports(a, b)
    cols = format_table({names[0]: a, names[1]: b}).splitlines()
    out = [cols[0] + "Delta".rjust(9), cols[1] + "-" * 9]
    for line, c in zip(cols[2:-2], sorted(d.per_class)):
        flag = " *" if d.per_class[c] < 0 else ""
        out.append(line + f"{d.per_class[c] * 100:+9.1f}{flag}")
    out.append(cols[-2] + "-" * 9)
    out.append(cols[-1] + f"{d.mean_ap * 100:+9.1f}")
    return "\n".join(out) + "\n"
