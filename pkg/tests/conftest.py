import numpy as np
import pytest

from selftrain_aed import detectors, selftrain, synthetic
from selftrain_aed.vocabulary import BoawVector, train_vocabulary

# small-vocabulary settings that keep end-to-end runs to seconds on one core
FAST = dict(vocab_size=32, max_vocab_frames=6000)


class Split:
    """One fold-set of a synthetic corpus, quantized and ready for detectors."""

    def __init__(self, corpus, seed=0):
        self.corpus = corpus
        self.labeled = selftrain.labeled_set_from_clips(corpus.labeled)
        self.pool = selftrain.pool_from_clips(corpus.unlabeled)
        self.folds = np.array(self.labeled.folds)
        self.labels = np.array(self.labeled.labels)
        train = np.flatnonzero(self.folds != 10)
        self.vocab = train_vocabulary(np.vstack([self.labeled.frames[i] for i in train]),
                                      M=FAST["vocab_size"], seed=seed,
                                      max_frames=FAST["max_vocab_frames"])
        self.X = selftrain.boaw_matrix(self.vocab, self.labeled.frames)
        self.PX = selftrain.boaw_matrix(self.vocab, self.pool.frames)
        self.classes = sorted(set(self.labels))

    def records(self, idx, cls):
        return [detectors.LabeledBoaw(BoawVector(self.labeled.ids[i], self.X[i]),
                                      int(self.labels[i] == cls)) for i in idx]

    def truth(self, segment_id):
        return self.corpus.truth[segment_id.split("#")[0]]


@pytest.fixture(scope="session")
def default_split():
    return Split(synthetic.generate(synthetic.default_spec(seed=0)))


@pytest.fixture(scope="session")
def calibrated_split():
    # pool drawn from the labeled distribution: no distractors, negligible channel noise
    spec = synthetic.default_spec(seed=0, distractor_fraction=0.0,
                                  mismatch={"snr_db": 40.0, "gain_jitter_db": 6.0})
    return Split(synthetic.generate(spec))


@pytest.fixture(scope="session")
def small_corpus():
    spec = synthetic.default_spec(seed=1, n_unlabeled=160)
    corpus = synthetic.generate(spec)
    return (corpus, selftrain.labeled_set_from_clips(corpus.labeled),
            selftrain.pool_from_clips(corpus.unlabeled))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
