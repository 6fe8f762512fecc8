import copy
import json
from collections import Counter

import numpy as np
import pytest

from conftest import FAST
from selftrain_aed import selection, selftrain
from selftrain_aed.selftrain import SelfTrainConfig, SelfTrainError


def _cfg(**kw):
    return SelfTrainConfig(**{**FAST, **kw})


@pytest.fixture(scope="module")
def baseline(small_corpus):
    _, labeled, pool = small_corpus
    return selftrain.run_baseline(labeled, _cfg(), pool=pool)


@pytest.fixture(scope="module")
def looped(baseline):
    state = copy.deepcopy(baseline)
    for _ in range(2):
        selftrain.run_iteration(state)
    return state


def test_baseline_has_every_fold_and_class(baseline):
    rep = baseline.report(0)
    assert len(rep.per_class_ap) == 4
    assert all(sorted(folds) == list(range(1, 11)) for folds in rep.per_class_ap.values())
    assert len(baseline.history) == 1 and baseline.best_iteration == 0
    assert 0.0 < rep.mean_ap <= 1.0


def test_baseline_test_fold_never_trains(baseline):
    for fs in baseline.folds:
        assert fs.test_fold not in fs.train_folds
        assert not set(fs.train_idx) & set(fs.test_idx)
        assert fs.vocab.training_fold_set == fs.train_folds


def test_missing_class_in_fold(small_corpus):
    _, labeled, _ = small_corpus
    drop = [i for i, (l, f) in enumerate(zip(labeled.labels, labeled.folds))
            if l == labeled.classes[0] and f == 4]
    keep = [i for i in range(len(labeled.ids)) if i not in drop]
    sub = selftrain.LabeledSet([labeled.ids[i] for i in keep], [labeled.labels[i] for i in keep],
                               labeled.folds[keep], [labeled.frames[i] for i in keep])
    with pytest.raises(SelfTrainError, match=f"class '{labeled.classes[0]}' absent from fold 4"):
        selftrain.run_baseline(sub, _cfg())


def test_iteration_without_pool(baseline):
    state = copy.deepcopy(baseline)
    state.pool = None
    with pytest.raises(SelfTrainError, match="no unlabeled pool"):
        selftrain.run_iteration(state)


def test_stalled_iteration_changes_nothing_but_counter(baseline):
    state = copy.deepcopy(baseline)
    state.config = _cfg(cap=0)
    before = {fs.test_fold: {c: d.to_json() for c, d in fs.detectors.items()} for fs in state.folds}
    selftrain.run_iteration(state)
    assert state.stalled and state.iteration == 1
    assert state.history[-1]["stalled"]
    assert state.history[-1]["mean_ap"] == state.history[0]["mean_ap"]
    after = {fs.test_fold: {c: d.to_json() for c, d in fs.detectors.items()} for fs in state.folds}
    assert after == before
    assert state.ledger == []


def test_stalled_loop_stops(small_corpus, baseline):
    _, labeled, pool = small_corpus
    cfg = _cfg(criterion="clarity", thresholds={"clarity": [1.0, -1.0]}, cap=0)
    state = selftrain.run_loop(labeled, pool, cfg, state=copy.deepcopy(baseline))
    assert len(state.history) == 2 and state.stalled


def test_infinite_epsilon_runs_one_iteration(small_corpus, baseline):
    _, labeled, pool = small_corpus
    state = selftrain.run_loop(labeled, pool, _cfg(convergence_epsilon=float("inf")),
                               state=copy.deepcopy(baseline))
    assert len(state.history) == 2


def test_no_segment_reselected(looped):
    assert looped.ledger
    seen = Counter((key, d.class_name, d.segment_id) for key, d in looped.ledger)
    assert max(seen.values()) == 1


def test_pool_conservation(looped):
    n = len(looped.pool.ids)
    for fs in looped.folds:
        for cls in looped.classes:
            taken = [p for p, _, _ in fs.pseudo[cls]]
            assert len(taken) + len(fs.remaining[cls]) == n
            assert not set(taken) & set(fs.remaining[cls])


def test_ledger_reconciles_with_training_sizes(looped):
    base = looped.history[0]["training_set_sizes"]
    last = looped.history[-1]["training_set_sizes"]
    per = Counter((key, d.class_name) for key, d in looped.ledger)
    for cls in looped.classes:
        for fs in looped.folds:
            k = str(fs.test_fold)
            assert last[cls][k] - base[cls][k] == per[(fs.test_fold, cls)]


def test_history_counts_match_ledger(looped):
    for rec in looped.history[1:]:
        it = rec["iteration"]
        for cls, added in rec["candidates"].items():
            ds = [d for _, d in looped.ledger if d.iteration == it and d.class_name == cls]
            assert added["pos"] == sum(d.polarity == selection.POSITIVE for d in ds)
            assert added["neg"] == sum(d.polarity == selection.NEGATIVE for d in ds)


def test_baseline_preserved_and_best_is_max(looped, baseline):
    assert looped.history[0]["mean_ap"] == baseline.history[0]["mean_ap"]
    aps = [r["mean_ap"] for r in looped.history]
    assert looped.history[looped.best_iteration]["mean_ap"] == max(aps)


def test_reproducible(small_corpus, looped):
    _, labeled, pool = small_corpus
    again = selftrain.run_baseline(labeled, _cfg(), pool=pool)
    for _ in range(2):
        selftrain.run_iteration(again)
    assert [r["report"] for r in again.history] == [r["report"] for r in looped.history]


def test_mlp_loop_runs(small_corpus):
    _, labeled, pool = small_corpus
    state = selftrain.run_loop(labeled, pool, _cfg(detector_kind="mlp", max_iterations=1))
    assert len(state.history) == 2
    for fs in state.folds:
        for cls, det in fs.detectors.items():
            assert det.kind == "mlp"


def test_precision_criterion_runs(small_corpus, baseline):
    _, labeled, pool = small_corpus
    cfg = _cfg(criterion="precision", max_iterations=1)
    state = selftrain.run_loop(labeled, pool, cfg, state=copy.deepcopy(baseline))
    assert len(state.history) == 2
    assert all(d.criterion == "precision" for _, d in state.ledger)


def test_write_run_layout(tmp_path, looped):
    out = selftrain.write_run(looped, tmp_path / "run", hashes={"labeled": "abc"})
    for name in ("run.config.json", "run.history.json", "report.json", "report.txt"):
        assert (out / name).is_file()
    hist = json.loads((out / "run.history.json").read_text())
    assert hist["seed"] == 0 and hist["manifest_sha256"] == {"labeled": "abc"}
    assert len(hist["history"]) == len(looped.history)
    mdir = out / "models" / f"iter{looped.best_iteration}"
    assert len(list(mdir.iterdir())) == 10
    assert len(list(mdir.glob("*/*.json"))) == 10 * 5  # vocabulary + 4 detectors
    ledger = selftrain.read_ledger(out)
    assert sorted(d.to_json() for d in ledger) == sorted(d.to_json() for _, d in looped.ledger)


def test_config_validation():
    for kw in ({"detector_kind": "rf"}, {"convergence_epsilon": -1.0}, {"criterion": "entropy"}, {"max_iterations": 0},
               {"cap": -1}, {"thresholds": {"margin": [1, 0]}}):
        with pytest.raises(ValueError):
            _cfg(**kw)
    cfg = _cfg(thresholds={"score": [0.9, 0.1]})
    assert cfg.thresholds["clarity"] == [0.9, -0.9]
