"""GMM audio vocabulary and soft-count Bag-of-Audio-Words quantization."""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .features import DEFAULT_PARAMS

log = logging.getLogger(__name__)

FORMAT = "aed-vocabulary"
VERSION = 1
LOG_2PI = np.log(2.0 * np.pi)


class VocabularyError(RuntimeError):
    pass


@dataclass
class Vocabulary:
    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, D)
    variances: np.ndarray  # (M, D)
    training_fold_set: tuple = ()
    seed: int = 0
    dsp: dict = field(default_factory=lambda: DEFAULT_PARAMS.to_dict())
    em: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def to_json(self):
        doc = {
            "format": FORMAT,
            "version": VERSION,
            "M": int(self.size),
            "D": int(self.dim),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "training_fold_set": sorted(int(f) for f in self.training_fold_set),
            "seed": int(self.seed),
            "dsp": self.dsp,
            "em": self.em,
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != FORMAT or doc.get("version") != VERSION:
            raise VocabularyError("not a version-1 vocabulary document")
        return cls(weights=np.array(doc["weights"], dtype=np.float64),
                   means=np.array(doc["means"], dtype=np.float64),
                   variances=np.array(doc["variances"], dtype=np.float64),
                   training_fold_set=tuple(doc["training_fold_set"]), seed=doc["seed"],
                   dsp=doc["dsp"], em=doc["em"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def permuted(self, perm):
        perm = np.asarray(perm)
        return Vocabulary(self.weights[perm], self.means[perm], self.variances[perm],
                          self.training_fold_set, self.seed, dict(self.dsp), dict(self.em))


@dataclass(frozen=True)
class BoawVector:
    clip_id: str
    alpha: np.ndarray


def _log_gauss_fast(xx, means, variances):
    # expanded quadratic form on xx = [x, x*x]; only used inside EM where speed matters
    prec = 1.0 / variances
    const = -0.5 * (means.shape[1] * LOG_2PI + np.log(variances).sum(axis=1)
                    + (means * means * prec).sum(axis=1))
    return xx @ np.hstack([means * prec, -0.5 * prec]).T + const


def _log_gauss_exact(x, means, variances):
    # row-independent reduction: one frame gets the same bits alone or in a batch
    out = np.empty((x.shape[0], means.shape[0]))
    norm = x.shape[1] * LOG_2PI + np.log(variances).sum(axis=1)
    for start in range(0, x.shape[0], 256):
        xb = x[start:start + 256]
        d = xb[:, None, :] - means[None, :, :]
        out[start:start + 256] = -0.5 * (norm + (d * d / variances).sum(axis=2))
    return out


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            i = rng.integers(n)
        else:
            i = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            i = min(i, n - 1)
        centers[j] = x[i]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def train_vocabulary(frames, M=128, seed=0, *, tol=1e-5, max_iter=200, var_floor=1e-3,
                     max_frames=2_000_000, max_reinit=10, training_fold_set=(),
                     dsp: Optional[dict] = None):
    """Fit a diagonal-covariance GMM with EM, seeded by k-means++.

    Stops when the per-frame log-likelihood gains less than ``tol`` or after
    ``max_iter`` iterations. A component whose soft count drops below two
    frames is re-seeded on the worst-explained frame, with the mean variance
    of the surviving components; more than ``max_reinit`` re-seeds raise
    :class:`VocabularyError`.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("frames must be an N x D matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("frames contain non-finite values")
    if M < 1:
        raise ValueError("M must be positive")
    if x.shape[0] < 10 * M:
        raise VocabularyError(f"need at least {10 * M} frames for M={M}, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    if x.shape[0] > max_frames:
        keep = np.sort(rng.choice(x.shape[0], size=max_frames, replace=False))
        x = x[keep]
    n, d = x.shape

    # EM is shift-equivariant; centering keeps the expanded quadratic well conditioned
    shift = x.mean(axis=0)
    xc = x - shift
    global_var = np.maximum(xc.var(axis=0), var_floor)

    xx = np.hstack([xc, xc * xc])
    means = _kmeanspp(xc, M, rng)
    variances = np.tile(global_var, (M, 1))
    weights = np.full(M, 1.0 / M)

    trace = []
    max_drop = 0.0
    reinits = 0
    monotone_from = 0
    converged = False
    for it in range(max_iter):
        logp = _log_gauss_fast(xx, means, variances) + np.log(weights)
        top = logp.max(axis=1, keepdims=True)
        resp = np.exp(logp - top)
        tot = resp.sum(axis=1, keepdims=True)
        lse = (top + np.log(tot))[:, 0]
        ll = float(lse.mean())
        trace.append(ll)
        if len(trace) - 1 > monotone_from:
            gain = trace[-1] - trace[-2]
            if -gain > max_drop:
                max_drop = -gain
                if gain < -1e-9:
                    log.warning("EM log-likelihood decreased by %.3e at iter %d", -gain, it)
            if gain < tol:
                converged = True
                break
        resp /= tot
        nk = resp.sum(axis=0)
        collapsed = np.flatnonzero(nk < 2.0)
        safe = np.maximum(nk, 1e-300)
        moments = (resp.T @ xx) / safe[:, None]
        means = moments[:, :d]
        variances = np.maximum(moments[:, d:] - means * means, var_floor)
        weights = nk / n
        if collapsed.size:
            reinits += collapsed.size
            if reinits > max_reinit:
                raise VocabularyError(f"EM degenerate: {reinits} component re-initializations")
            worst = np.argsort(lse, kind="stable")[:collapsed.size]
            alive = np.setdiff1d(np.arange(M), collapsed)
            # a global-variance seed is too broad to win frames from fitted components
            means[collapsed] = xc[worst]
            variances[collapsed] = variances[alive].mean(axis=0) if alive.size else global_var
            weights[collapsed] = 2.0 / n
            weights /= weights.sum()
            monotone_from = len(trace)
            log.debug("reinitialized %d collapsed components at iter %d", collapsed.size, it)

    return Vocabulary(weights=weights, means=means + shift, variances=variances,
                      training_fold_set=tuple(sorted(training_fold_set)), seed=int(seed),
                      dsp=dict(dsp) if dsp is not None else DEFAULT_PARAMS.to_dict(),
                      em={"tol": tol, "max_iter": max_iter, "var_floor": var_floor,
                          "n_frames": int(n), "n_iter": len(trace), "converged": converged,
                          "reinits": int(reinits), "max_ll_decrease": max_drop,
                          "log_likelihood": trace})


def posteriors(vocab, frames):
    """Per-frame component posteriors, shape (T, M); rows sum to one."""
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    logp = _log_gauss_exact(x, vocab.means, vocab.variances) + np.log(vocab.weights)
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def posterior(vocab, frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (vocab.dim,):
        raise ValueError(f"frame must have length {vocab.dim}")
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite values")
    return posteriors(vocab, frame[None, :])[0]


def quantize(vocab, mfcc):
    """Soft-count histogram: mean posterior over all frames of a recording."""
    frames = getattr(mfcc, "frames", mfcc)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("empty frame matrix")
    clip_id = getattr(mfcc, "clip_id", "")
    return BoawVector(clip_id=clip_id, alpha=posteriors(vocab, frames).mean(axis=0))
