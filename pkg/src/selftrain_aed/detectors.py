"""Binary one-vs-rest detectors: linear SVM with Platt scaling, and a 1-hidden-layer MLP."""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .vocabulary import BoawVector

FORMAT = "aed-detector"
VERSION = 1

SVM_DEFAULTS = {"c": 0.01, "max_epochs": 1000, "tol": 1e-4, "holdout": 0.2}
MLP_DEFAULTS = {"hidden": 100, "dropout": 0.5, "lr": 0.01, "momentum": 0.9,
                "batch_size": 32, "epochs": 10, "update_epochs": 2}


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledBoaw:
    boaw: BoawVector
    y: int
    weight: float = 1.0

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.y!r}")
        if not self.weight > 0:
            raise ValueError("weight must be positive")


@dataclass
class Detector:
    kind: str  # "svm" | "mlp"
    class_name: str
    fold_set: tuple
    params: dict  # name -> ndarray
    input_dim: int
    seed: int
    hyper: dict
    calibration: Optional[tuple] = None  # Platt (A, B), svm only
    train_log: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self):
        doc = {
            "format": FORMAT,
            "version": VERSION,
            "kind": self.kind,
            "class_name": self.class_name,
            "fold_set": [int(f) for f in self.fold_set],
            "input_dim": int(self.input_dim),
            "seed": int(self.seed),
            "hyper": self.hyper,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in sorted(self.params.items())},
            "calibration": None if self.calibration is None else list(self.calibration),
            "train_log": [list(r) for r in self.train_log],
            "meta": self.meta,
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != FORMAT or doc.get("version") != VERSION:
            raise DetectorError("not a version-1 detector document")
        params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in doc["params"].items()}
        cal = doc["calibration"]
        return cls(kind=doc["kind"], class_name=doc["class_name"],
                   fold_set=tuple(doc["fold_set"]), params=params,
                   input_dim=doc["input_dim"], seed=doc["seed"], hyper=doc["hyper"],
                   calibration=None if cal is None else tuple(cal),
                   train_log=[tuple(r) for r in doc["train_log"]], meta=doc["meta"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def as_arrays(data):
    """Stack LabeledBoaw records into (X, y, sample_weight)."""
    if not data:
        raise DetectorError("empty training data")
    X = np.vstack([np.asarray(d.boaw.alpha, dtype=np.float64) for d in data])
    y = np.array([d.y for d in data], dtype=np.int64)
    w = np.array([d.weight for d in data], dtype=np.float64)
    return X, y, w


def _check_training(X, y):
    if not np.all(np.isfinite(X)):
        raise DetectorError("non-finite features")
    if y.min() == y.max():
        raise DetectorError("single-class data")


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ----------------------------------------------------------------------------
# Linear SVM

def _svm_dual_cd(X, y, weight, c, seed, max_epochs, tol):
    """Dual coordinate descent for the L1-loss linear SVM.

    The bias is folded in as a constant feature (so it is regularized).
    Returns ``(w, b, alpha, epochs, violation)``.
    """
    n = X.shape[0]
    Xb = np.hstack([X, np.ones((n, 1))])
    ys = np.where(y == 1, 1.0, -1.0)
    upper = c * weight
    qd = np.einsum("ij,ij->i", Xb, Xb)
    alpha = np.zeros(n)
    w = np.zeros(Xb.shape[1])
    rng = np.random.default_rng(seed)
    violation = np.inf
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        violation = 0.0
        for i in rng.permutation(n):
            xi = Xb[i]
            g = ys[i] * (w @ xi) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= upper[i]:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0:
                violation = max(violation, abs(pg))
                if qd[i] > 0:
                    new = min(max(a - g / qd[i], 0.0), upper[i])
                    w += (new - a) * ys[i] * xi
                    alpha[i] = new
        if violation < tol:
            break
    return w[:-1].copy(), float(w[-1]), alpha, epoch, violation


def fit_platt(margins, y, max_iter=100):
    """Fit ``p = 1 / (1 + exp(A f + B))`` by Newton's method with smoothed targets."""
    f = np.asarray(margins, dtype=np.float64)
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    hi, lo = (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0)
    t = np.where(y == 1, hi, lo)
    A, B = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))
    sigma = 1e-12

    def objective(A, B):
        z = A * f + B
        # sum of t*log(1+e^-z) ... written stably
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)),
                                     (t - 1) * z + np.log1p(np.exp(z)))))

    fval = objective(A, B)
    for _ in range(max_iter):
        p = _sigmoid(-(A * f + B))  # model probability of positive
        d1 = t - p
        d2 = p * (1 - p)
        h11 = sigma + np.sum(f * f * d2)
        h22 = sigma + np.sum(d2)
        h21 = np.sum(f * d2)
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        else:
            break
    if A >= 0:
        # keep the map strictly decreasing in -margin so ranking is preserved
        A = -1e-6
    return float(A), float(B)


def _stratified_holdout(y, fraction, rng):
    hold = np.zeros(len(y), dtype=bool)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        k = int(np.floor(fraction * len(idx)))
        if k == 0 or k == len(idx):
            return np.zeros(len(y), dtype=bool)
        hold[rng.choice(idx, size=k, replace=False)] = True
    return hold


def train_svm(data, c=0.01, seed=0, class_name="", fold_set=(), **overrides):
    """Linear SVM by dual coordinate descent over all of ``data``, then Platt scaling.

    The sigmoid is fit on a stratified seeded 20% subset of ``data``; with
    too few samples per class to draw one, on all of it.
    """
    X, y, w = as_arrays(data)
    _check_training(X, y)
    hyper = dict(SVM_DEFAULTS, c=float(c), **overrides)
    rng = np.random.default_rng(seed)
    coef, b, alpha, epochs, viol = _svm_dual_cd(
        X, y, w, hyper["c"], int(rng.integers(2**32)), hyper["max_epochs"], hyper["tol"])
    cal = _stratified_holdout(y, hyper["holdout"], rng)
    if not cal.any():
        cal = np.ones(len(y), dtype=bool)
    A, B = fit_platt(X[cal] @ coef + b, y[cal])
    return Detector(kind="svm", class_name=class_name, fold_set=tuple(fold_set),
                    params={"w": coef, "b": np.array([b]), "alpha": alpha},
                    input_dim=X.shape[1], seed=int(seed), hyper=hyper,
                    calibration=(A, B), train_log=[(0, 0, 0)],
                    meta={"epochs": int(epochs), "max_violation": float(viol),
                          "n_train": int(len(y)), "n_calibration": int(cal.sum())})


def retrain_svm(data, c=0.01, seed=0, class_name="", fold_set=(), train_log=None):
    """Full retrain from scratch; carries the self-training log forward."""
    det = train_svm(data, c=c, seed=seed, class_name=class_name, fold_set=fold_set)
    if train_log is not None:
        det.train_log = list(train_log)
    return det


def svm_margin(det, X):
    return np.asarray(X, dtype=np.float64) @ det.params["w"] + det.params["b"][0]


# ----------------------------------------------------------------------------
# MLP

def init_mlp(n_in, n_hidden, seed):
    rng = np.random.default_rng(seed)
    r1 = np.sqrt(6.0 / (n_in + n_hidden))
    r2 = np.sqrt(6.0 / (n_hidden + 2))
    return {"W1": rng.uniform(-r1, r1, size=(n_in, n_hidden)), "b1": np.zeros(n_hidden),
            "W2": rng.uniform(-r2, r2, size=(n_hidden, 2)), "b2": np.zeros(2)}


def mlp_forward(params, X):
    h = np.tanh(X @ params["W1"] + params["b1"])
    return _softmax(h @ params["W2"] + params["b2"])


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def mlp_loss_and_grad(params, X, y, weight=None, mask=None):
    """Weighted mean cross-entropy and its gradient.

    ``mask`` is an already-scaled dropout mask on the hidden units (``None``
    disables dropout).
    """
    n = X.shape[0]
    weight = np.ones(n) if weight is None else weight
    a1 = X @ params["W1"] + params["b1"]
    h = np.tanh(a1)
    hd = h if mask is None else h * mask
    z = hd @ params["W2"] + params["b2"]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -np.sum(weight * logp[np.arange(n), y]) / n
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz *= (weight / n)[:, None]
    grads = {"W2": hd.T @ dz, "b2": dz.sum(axis=0)}
    dh = dz @ params["W2"].T
    if mask is not None:
        dh = dh * mask
    da = dh * (1.0 - h * h)
    grads["W1"] = X.T @ da
    grads["b1"] = da.sum(axis=0)
    return float(loss), grads


def _sgd(params, X, y, w, hyper, epochs, rng):
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = X.shape[0]
    bs = hyper["batch_size"]
    keep = 1.0 - hyper["dropout"]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            mask = None
            if hyper["dropout"] > 0:
                mask = (rng.random((len(idx), params["W1"].shape[1])) < keep) / keep
            _, grads = mlp_loss_and_grad(params, X[idx], y[idx], w[idx], mask)
            for k in params:
                velocity[k] = hyper["momentum"] * velocity[k] - hyper["lr"] * grads[k]
                params[k] += velocity[k]
    return params


def train_mlp(data, seed=0, class_name="", fold_set=(), epochs=None, **overrides):
    """Train an input -> 100 tanh (dropout) -> 2 softmax detector by momentum SGD.

    ``epochs=0`` leaves the network at its random initialization.
    """
    X, y, w = as_arrays(data)
    _check_training(X, y)
    hyper = dict(MLP_DEFAULTS, **overrides)
    if epochs is not None:
        hyper["epochs"] = int(epochs)
    rng = np.random.default_rng(seed)
    params = init_mlp(X.shape[1], hyper["hidden"], int(rng.integers(2**32)))
    params = _sgd(params, X, y, w, hyper, hyper["epochs"], rng)
    return Detector(kind="mlp", class_name=class_name, fold_set=tuple(fold_set),
                    params=params, input_dim=X.shape[1], seed=int(seed), hyper=hyper,
                    train_log=[(0, 0, 0)], meta={"n_train": int(len(y))})


def replay_sample(data, fraction=0.25, seed=0):
    """Seeded subsample of the original labeled set, for update rehearsal."""
    rng = np.random.default_rng(seed)
    k = int(round(fraction * len(data)))
    idx = np.sort(rng.choice(len(data), size=k, replace=False))
    return [data[i] for i in idx]


def update_mlp(det, new_data, replay, seed=None, iteration=None):
    """Continue SGD from the current weights on ``new_data`` plus ``replay``.

    Returns a new detector; ``det`` is left untouched.
    """
    if det.kind != "mlp":
        raise DetectorError(f"update_mlp needs an mlp detector, got {det.kind!r}")
    if not new_data:
        raise DetectorError("new_data must be nonempty")
    data = list(new_data) + list(replay)
    X, y, w = as_arrays(data)
    if X.shape[1] != det.input_dim:
        raise DetectorError(f"dimension mismatch: {X.shape[1]} != {det.input_dim}")
    if not np.all(np.isfinite(X)):
        raise DetectorError("non-finite features")
    step = len(det.train_log)
    rng = np.random.default_rng(det.seed + 7919 * step if seed is None else seed)
    params = {k: v.copy() for k, v in det.params.items()}
    params = _sgd(params, X, y, w, det.hyper, det.hyper["update_epochs"], rng)
    n_pos = sum(1 for d in new_data if d.y == 1)
    log = list(det.train_log) + [(step if iteration is None else iteration,
                                  n_pos, len(new_data) - n_pos)]
    return Detector(kind="mlp", class_name=det.class_name, fold_set=det.fold_set,
                    params=params, input_dim=det.input_dim, seed=det.seed,
                    hyper=dict(det.hyper), train_log=log, meta=dict(det.meta))


# ----------------------------------------------------------------------------

def score_many(det, X):
    """Scores in [0, 1] for a stack of BoAW vectors (rows)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != det.input_dim:
        raise DetectorError(f"dimension mismatch: expected {det.input_dim}, got {X.shape[1]}")
    if det.kind == "svm":
        A, B = det.calibration
        return _sigmoid(-(A * svm_margin(det, X) + B))
    if det.kind == "mlp":
        return mlp_forward(det.params, X)[:, 1]
    raise DetectorError(f"unknown detector kind {det.kind!r}")


def score(det, x):
    alpha = x.alpha if isinstance(x, BoawVector) else x
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1:
        raise DetectorError("score expects a single vector")
    return float(score_many(det, alpha[None, :])[0])


def train(kind, data, seed=0, c=0.01, class_name="", fold_set=()):
    if kind == "svm":
        return train_svm(data, c=c, seed=seed, class_name=class_name, fold_set=fold_set)
    if kind == "mlp":
        return train_mlp(data, seed=seed, class_name=class_name, fold_set=fold_set)
    raise DetectorError(f"unknown detector kind {kind!r}")
