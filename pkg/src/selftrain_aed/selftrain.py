"""Self-training loop: baseline CV, candidate selection, retraining, re-evaluation."""

import copy
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import detectors as det_mod
from . import selection
from .evaluation import EvalReport, average_precision, build_report
from .features import DEFAULT_PARAMS, mfcc_cached
from .ingest import N_FOLDS, load_clip, segment_clip
from .vocabulary import BoawVector, posteriors, train_vocabulary

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = {"score": [0.95, 0.05], "precision": [0.95, 0.95], "clarity": [0.9, -0.9]}


class SelfTrainError(RuntimeError):
    pass


@dataclass
class SelfTrainConfig:
    detector_kind: str = "svm"
    criterion: str = "clarity"
    thresholds: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_THRESHOLDS))
    cap: int = selection.DEFAULT_CAP
    max_iterations: int = 10
    convergence_epsilon: float = 0.1  # Mean-AP points
    include_pseudo_negatives: bool = True
    seed: int = 0
    vocab_size: int = 128
    svm_c: float = 0.01
    max_vocab_frames: int = 2_000_000
    replay_fraction: float = 0.25
    jobs: int = 1

    def __post_init__(self):
        merged = copy.deepcopy(DEFAULT_THRESHOLDS)
        merged.update({k: list(v) for k, v in self.thresholds.items()})
        self.thresholds = merged
        self.validate()

    def validate(self):
        if self.detector_kind not in ("svm", "mlp"):
            raise ValueError(f"detector_kind must be 'svm' or 'mlp', got {self.detector_kind!r}")
        if self.criterion not in selection.CRITERIA:
            raise ValueError(f"criterion must be one of {selection.CRITERIA}")
        unknown = set(self.thresholds) - set(selection.CRITERIA)
        if unknown:
            raise ValueError(f"unknown threshold criteria {sorted(unknown)}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_epsilon >= 0:
            raise ValueError("convergence_epsilon must be >= 0")
        if self.cap < 0:
            raise ValueError("cap must be >= 0")

    def to_dict(self):
        return asdict(self)


def _seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ----------------------------------------------------------------------------
# corpus preparation

@dataclass
class LabeledSet:
    ids: list
    labels: list
    folds: np.ndarray
    frames: list  # per clip T x 60

    @property
    def classes(self):
        return sorted(set(self.labels))


@dataclass
class UnlabeledPool:
    ids: list
    frames: list


def features_for_clips(clips, params=DEFAULT_PARAMS, cache_dir=None):
    out = []
    for clip in clips:
        if len(clip.samples) < params.frame_len:
            log.warning("skipping %s: shorter than one frame", clip.id)
            out.append(None)
            continue
        out.append(mfcc_cached(clip, cache_dir, params).frames)
    return out


def labeled_set_from_clips(clips, params=DEFAULT_PARAMS, cache_dir=None):
    frames = features_for_clips(clips, params, cache_dir)
    keep = [i for i, f in enumerate(frames) if f is not None]
    return LabeledSet(ids=[clips[i].id for i in keep], labels=[clips[i].label for i in keep],
                      folds=np.array([clips[i].fold for i in keep], dtype=np.int64),
                      frames=[frames[i] for i in keep])


def pool_from_clips(clips, params=DEFAULT_PARAMS, cache_dir=None, seg_len_s=3.5):
    segments = [s for clip in clips for s in segment_clip(clip, seg_len_s)]
    frames = features_for_clips(segments, params, cache_dir)
    keep = [i for i, f in enumerate(frames) if f is not None]
    return UnlabeledPool(ids=[segments[i].id for i in keep], frames=[frames[i] for i in keep])


def labeled_set_from_manifest(manifest, params=DEFAULT_PARAMS, cache_dir=None):
    clips = [load_clip(e) for e in manifest if e.source == "labeled"]
    return labeled_set_from_clips(clips, params, cache_dir)


def pool_from_manifest(manifest, params=DEFAULT_PARAMS, cache_dir=None, seg_len_s=3.5):
    clips = [load_clip(e) for e in manifest if e.source == "unlabeled"]
    return pool_from_clips(clips, params, cache_dir, seg_len_s)


def check_folds(labeled):
    present = set(int(f) for f in labeled.folds)
    missing = sorted(set(range(1, N_FOLDS + 1)) - present)
    if missing:
        raise SelfTrainError(f"missing folds: {missing}")
    for cls in labeled.classes:
        for fold in range(1, N_FOLDS + 1):
            if not any(l == cls and f == fold for l, f in zip(labeled.labels, labeled.folds)):
                raise SelfTrainError(f"class {cls!r} absent from fold {fold}")


def boaw_matrix(vocab, frames_list):
    return np.vstack([posteriors(vocab, f).mean(axis=0) for f in frames_list])


# ----------------------------------------------------------------------------
# run state

@dataclass
class FoldState:
    test_fold: int
    train_folds: tuple
    vocab: object
    X: np.ndarray  # BoAW of every labeled clip under this fold-set's vocabulary
    train_idx: np.ndarray
    test_idx: np.ndarray
    detectors: dict  # class -> Detector
    pool_X: Optional[np.ndarray] = None
    remaining: dict = field(default_factory=dict)  # class -> list of pool indices
    pseudo: dict = field(default_factory=dict)  # class -> list of (pool index, y, iteration)


@dataclass
class RunState:
    config: SelfTrainConfig
    labeled: LabeledSet
    pool: Optional[UnlabeledPool]
    folds: list
    history: list = field(default_factory=list)
    iteration: int = 0
    stalled: bool = False
    ledger: list = field(default_factory=list)  # accepted CandidateDecision, with fold-set
    best_iteration: int = 0
    best_detectors: dict = field(default_factory=dict)  # test fold -> class -> Detector

    @property
    def classes(self):
        return self.labeled.classes

    def report(self, iteration=None):
        rec = self.history[-1 if iteration is None else iteration]
        return EvalReport.from_dict(rec["report"])


def fold_set_name(fs):
    return "f" + "-".join(str(f) for f in fs.train_folds)


def _labeled_records(X, idx, labels, cls):
    return [det_mod.LabeledBoaw(BoawVector(str(i), X[i]), int(labels[i] == cls)) for i in idx]


def _train_detector(config, data, cls, fs, seed):
    if config.detector_kind == "svm":
        return det_mod.train_svm(data, c=config.svm_c, seed=seed, class_name=cls,
                                 fold_set=fs.train_folds)
    return det_mod.train_mlp(data, seed=seed, class_name=cls, fold_set=fs.train_folds)


def _evaluate(state):
    labels = np.array(state.labeled.labels)
    per = {c: {} for c in state.classes}
    n_test = {}
    for fs in state.folds:
        X_test = fs.X[fs.test_idx]
        n_test[fs.test_fold] = int(len(fs.test_idx))
        for c in state.classes:
            s = det_mod.score_many(fs.detectors[c], X_test)
            per[c][fs.test_fold] = average_precision(s, (labels[fs.test_idx] == c).astype(int))
    return build_report(per, n_test)


def _map(config, fn, items):
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _snapshot(state):
    return {fs.test_fold: dict(fs.detectors) for fs in state.folds}


def _record(state, report, added, t0, stalled=False, training_sizes=None):
    state.history.append({
        "iteration": state.iteration,
        "report": report.to_dict(),
        "mean_ap": report.mean_ap,
        "candidates": added,
        "training_set_sizes": training_sizes or {},
        "stalled": stalled,
        "wall_time_s": time.perf_counter() - t0,
    })


def _training_sizes(state):
    return {c: {str(fs.test_fold): int(len(fs.train_idx) + len(fs.pseudo.get(c, [])))
                for fs in state.folds} for c in state.classes}


def run_baseline(labeled, config, pool=None, vocabularies=None, dsp=None):
    """Train one vocabulary and one detector per class for each of the 10 fold-sets.

    The pool is stored but not read; history[0] is the baseline report.
    """
    t0 = time.perf_counter()
    check_folds(labeled)
    labels = np.array(labeled.labels)
    classes = labeled.classes
    dsp = dsp if dsp is not None else DEFAULT_PARAMS.to_dict()

    def build(test_fold):
        train_folds = tuple(f for f in range(1, N_FOLDS + 1) if f != test_fold)
        train_idx = np.flatnonzero(labeled.folds != test_fold)
        test_idx = np.flatnonzero(labeled.folds == test_fold)
        if vocabularies is not None:
            vocab = vocabularies[test_fold]
        else:
            pooled = np.vstack([labeled.frames[i] for i in train_idx])
            vocab = train_vocabulary(pooled, M=config.vocab_size,
                                     seed=_seed(config.seed, test_fold, 0),
                                     max_frames=config.max_vocab_frames,
                                     training_fold_set=train_folds, dsp=dsp)
        X = boaw_matrix(vocab, labeled.frames)
        fs = FoldState(test_fold, train_folds, vocab, X, train_idx, test_idx, {})
        for ci, c in enumerate(classes):
            data = _labeled_records(X, train_idx, labels, c)
            fs.detectors[c] = _train_detector(config, data, c, fs,
                                              _seed(config.seed, test_fold, ci + 1, 0))
        return fs

    folds = _map(config, build, range(1, N_FOLDS + 1))
    state = RunState(config=config, labeled=labeled, pool=pool, folds=folds)
    report = _evaluate(state)
    _record(state, report, {c: {"pos": 0, "neg": 0} for c in classes}, t0,
            training_sizes=_training_sizes(state))
    state.best_detectors = _snapshot(state)
    log.info("baseline Mean AP %.2f", 100 * report.mean_ap)
    return state


def _ensure_pool(state):
    if state.pool is None:
        raise SelfTrainError("no unlabeled pool attached to the run")
    for fs in state.folds:
        if fs.pool_X is None:
            fs.pool_X = (boaw_matrix(fs.vocab, state.pool.frames) if state.pool.ids
                         else np.zeros((0, fs.vocab.size)))
            fs.remaining = {c: list(range(len(state.pool.ids))) for c in state.classes}
            fs.pseudo = {c: [] for c in state.classes}


def _precision_curves(state, fs, cls, ci, it):
    """Curves from an auxiliary detector that never sees one training fold."""
    cfg = state.config
    labels = np.array(state.labeled.labels)
    inner = fs.test_fold % N_FOLDS + 1
    fit_idx = fs.train_idx[state.labeled.folds[fs.train_idx] != inner]
    held_idx = fs.train_idx[state.labeled.folds[fs.train_idx] == inner]
    data = _labeled_records(fs.X, fit_idx, labels, cls) + _pseudo_records(state, fs, cls)
    aux = _train_detector(cfg, data, cls, fs, _seed(cfg.seed, fs.test_fold, ci + 1, it, 1))
    held = _labeled_records(fs.X, held_idx, labels, cls)
    neg = selection.estimate_precision_curve(aux, held, negative=True)
    return selection.estimate_precision_curve(aux, held), neg


def _pseudo_records(state, fs, cls, only_iteration=None):
    return [det_mod.LabeledBoaw(BoawVector(state.pool.ids[p], fs.pool_X[p]), y)
            for p, y, it in fs.pseudo[cls] if only_iteration in (None, it)]


def _select(state, fs, cls, ci, it):
    cfg = state.config
    labels = np.array(state.labeled.labels)
    det = fs.detectors[cls]
    remaining = fs.remaining[cls]
    if not remaining:
        return []
    train_scores = det_mod.score_many(det, fs.X[fs.train_idx])
    is_pos = labels[fs.train_idx] == cls
    pool_scores = det_mod.score_many(det, fs.pool_X[remaining])
    bank = selection.ScoreBank(
        pos_train_scores=train_scores[is_pos].tolist(),
        neg_train_scores=train_scores[~is_pos].tolist(),
        unlabeled_scores={state.pool.ids[p]: float(s) for p, s in zip(remaining, pool_scores)})
    hi, lo = cfg.thresholds[cfg.criterion]
    kw = dict(class_name=cls, iteration=it)
    if cfg.criterion == "score":
        decisions = selection.select_by_score(bank, hi, lo, cfg.cap, **kw)
    elif cfg.criterion == "clarity":
        decisions = selection.select_by_clarity(bank, hi, lo, cfg.cap, **kw)
    else:
        curve, neg_curve = _precision_curves(state, fs, cls, ci, it)
        decisions = selection.select_by_precision(bank, curve, hi, cfg.cap, neg_curve,
                                                  tau_neg=lo, **kw)
    if not cfg.include_pseudo_negatives:
        decisions = [d for d in decisions if d.polarity != selection.NEGATIVE]
    return selection.accepted(decisions)


def _iterate_fold(state, fs, it):
    cfg = state.config
    labels = np.array(state.labeled.labels)
    index = {u: i for i, u in enumerate(state.pool.ids)}
    chosen = {}
    for ci, cls in enumerate(state.classes):
        picked = _select(state, fs, cls, ci, it)
        chosen[cls] = picked
        taken = {index[d.segment_id] for d in picked}
        fs.remaining[cls] = [p for p in fs.remaining[cls] if p not in taken]
        fs.pseudo[cls].extend((index[d.segment_id], int(d.polarity == selection.POSITIVE), it)
                              for d in picked)
    for ci, cls in enumerate(state.classes):
        if not chosen[cls]:
            continue
        old = fs.detectors[cls]
        n_pos = sum(d.polarity == selection.POSITIVE for d in chosen[cls])
        seed = _seed(cfg.seed, fs.test_fold, ci + 1, it)
        if cfg.detector_kind == "svm":
            data = _labeled_records(fs.X, fs.train_idx, labels, cls) + _pseudo_records(state, fs, cls)
            new = det_mod.retrain_svm(data, c=cfg.svm_c, seed=seed, class_name=cls,
                                      fold_set=fs.train_folds, train_log=old.train_log)
            new.train_log.append((it, n_pos, len(chosen[cls]) - n_pos))
        else:
            labeled_train = _labeled_records(fs.X, fs.train_idx, labels, cls)
            replay = det_mod.replay_sample(labeled_train, cfg.replay_fraction, seed)
            new = det_mod.update_mlp(old, _pseudo_records(state, fs, cls, only_iteration=it),
                                     replay, seed=seed, iteration=it)
        fs.detectors[cls] = new
    return chosen


def run_iteration(state):
    """One round: score pool, select, retrain, evaluate; appends to history."""
    t0 = time.perf_counter()
    _ensure_pool(state)
    state.iteration += 1
    it = state.iteration
    results = _map(state.config, lambda fs: _iterate_fold(state, fs, it), state.folds)
    added = {c: {"pos": 0, "neg": 0} for c in state.classes}
    for fs, chosen in zip(state.folds, results):
        for cls, picked in chosen.items():
            for d in picked:
                state.ledger.append((fs_key(fs), d))
                added[cls]["pos" if d.polarity == selection.POSITIVE else "neg"] += 1
    stalled = all(v["pos"] == 0 and v["neg"] == 0 for v in added.values())
    report = _evaluate(state)
    _record(state, report, added, t0, stalled=stalled, training_sizes=_training_sizes(state))
    state.stalled = stalled
    if report.mean_ap > state.history[state.best_iteration]["mean_ap"]:
        state.best_iteration = it
        state.best_detectors = _snapshot(state)
    log.info("iteration %d Mean AP %.2f (+%d pos, +%d neg)%s", it, 100 * report.mean_ap,
             sum(v["pos"] for v in added.values()), sum(v["neg"] for v in added.values()),
             " stalled" if stalled else "")
    return state


def fs_key(fs):
    return fs.test_fold


def run_loop(labeled, pool, config, vocabularies=None, state=None):
    """Baseline, then iterate until Mean AP stops improving by ``convergence_epsilon``."""
    if state is None:
        state = run_baseline(labeled, config, pool=pool, vocabularies=vocabularies)
    state.config = config
    state.pool = pool if state.pool is None else state.pool
    for _ in range(config.max_iterations):
        run_iteration(state)
        gain = 100.0 * (state.history[-1]["mean_ap"] - state.history[-2]["mean_ap"])
        if state.stalled or gain < config.convergence_epsilon:
            break
    return state


# ----------------------------------------------------------------------------
# persistence

def manifest_hash(path):
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_run(state, run_dir, extra_config=None, hashes=None):
    """Persist config, history, best-iteration models and the pseudo-label ledger."""
    run_dir = Path(run_dir)
    provenance = {"seed": state.config.seed, "manifest_sha256": hashes or {}}
    _dump(run_dir / "run.config.json", {"config": state.config.to_dict(),
                                        "run": extra_config or {}, **provenance})
    _dump(run_dir / "run.history.json", {"history": state.history,
                                         "best_iteration": state.best_iteration,
                                         "stalled": state.stalled, **provenance})
    best = state.report(state.best_iteration)
    (run_dir / "report.json").write_text(best.to_json() + "\n", encoding="utf-8")
    (run_dir / "report.txt").write_text(best.table(f"iter{state.best_iteration}"),
                                        encoding="utf-8")
    mdir = run_dir / "models" / f"iter{state.best_iteration}"
    for fs in state.folds:
        fdir = mdir / fold_set_name(fs)
        fdir.mkdir(parents=True, exist_ok=True)
        fs.vocab.save(fdir / "vocabulary.json")
        for cls, det in state.best_detectors[fs.test_fold].items():
            det.save(fdir / f"{cls}.json")
    ledger_dir = run_dir / "ledger"
    ledger_dir.mkdir(parents=True, exist_ok=True)
    by_file = {}
    for key, d in state.ledger:
        fs = next(f for f in state.folds if f.test_fold == key)
        by_file.setdefault(f"{d.class_name}__{fold_set_name(fs)}.jsonl", []).append(d)
    for name, decisions in sorted(by_file.items()):
        with open(ledger_dir / name, "w", encoding="utf-8") as fh:
            for d in decisions:
                fh.write(d.to_json() + "\n")
    return run_dir


def read_ledger(run_dir):
    out = []
    for path in sorted((Path(run_dir) / "ledger").glob("*.jsonl")):
        with open(path, encoding="utf-8") as fh:
            out.extend(selection.CandidateDecision(**json.loads(line)) for line in fh if line.strip())
    return out
