"""Adaptive decoding controller.

A logistic-regression filter maps 12 confidence statistics of a classifier's
logits to the probability that its prediction is correct. At inference the
stream is decoded level by level and decoding stops at the first level whose
predicted confidence reaches the threshold ``tau``; if none does, the last
level's prediction is returned.
"""

import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .codec import DEFAULT_CHECKPOINTS, ProgressiveBitstream, decode, encode, resolve_budget
from .errors import FormatError

FEATURE_NAMES = (
    "conf_max", "conf_std", "conf_entropy", "conf_ratio", "top10_sum",
    "logit_mean", "logit_max", "logit_std", "logit_delta12",
    "loss_pseudo_ce", "margin_ce", "energy",
)
N_FEATURES = len(FEATURE_NAMES)
# exp(700) is near the float64 ceiling; larger top-1/top-2 gaps saturate conf_ratio
_RATIO_CAP = 700.0


def extract_features(logits):
    """The 12-entry confidence profile of one logit vector (natural logs).

    ``top10_sum`` covers all classes when there are fewer than ten.
    """
    z = np.asarray(logits, dtype=np.float64).ravel()
    if z.size < 2:
        raise ValueError(f"need at least 2 logits, got {z.size}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    zmax = z.max()
    lse = zmax + np.log(np.sum(np.exp(z - zmax)))
    logp = z - lse
    p = np.exp(logp)
    top = np.sort(z)[::-1]
    p_sorted = np.sort(p)[::-1]
    delta = top[0] - top[1]
    return np.array([
        p_sorted[0],
        p.std(),
        -np.sum(p * logp),
        np.exp(min(delta, _RATIO_CAP)),
        p_sorted[:10].sum(),
        z.mean(),
        top[0],
        z.std(),
        delta,
        lse - top[0],
        delta,
        -lse,
    ])


class LogitFeatures(TransformerMixin, BaseEstimator):
    """Stateless transformer: rows of logits to rows of confidence features."""

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X)
        return np.vstack([extract_features(row) for row in X])

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)


def _sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _log1pexp(t):
    return np.logaddexp(0.0, t)


_FILTER_MAGIC = b"PICF"
_FILTER_VERSION = 1


class ConfidenceFilter(ClassifierMixin, BaseEstimator):
    """L2-regularized logistic regression on standardized features.

    Minimizes ``mean(log-loss) + l2/2 * ||w||^2`` (bias unpenalized) with
    damped Newton steps until the gradient norm is at most ``tol`` or
    ``max_iter`` steps were taken. Features with zero spread keep a unit
    standard deviation, so they center to zero and their weight stays at 0.

    A training set with a single class cannot be separated; the filter then
    predicts that class's smoothed frequency everywhere and sets
    ``degenerate_``.
    """

    def __init__(self, l2=1e-4, tol=1e-8, max_iter=1000):
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter

    def _objective(self, Xb, y, theta):
        t = Xb @ theta
        w = theta[:-1]
        return float(np.mean(_log1pexp(t) - y * t) + 0.5 * self.l2 * w @ w)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        n, d = X.shape
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.std_ = np.where(std > 0, std, 1.0)
        self.n_train_ = n
        self.degenerate_ = bool(np.all(y == y[0]))
        if self.degenerate_:
            warnings.warn("filter training set has a single class; fitting a constant-probability model", stacklevel=2)
            rate = (y.sum() + 0.5) / (n + 1.0)
            self.coef_ = np.zeros(d)
            self.intercept_ = float(np.log(rate / (1 - rate)))
            self.n_iter_ = 0
            self.grad_norm_ = 0.0
            return self

        Xb = np.hstack([(X - self.mean_) / self.std_, np.ones((n, 1))])
        penalty = np.full(d + 1, self.l2)
        penalty[-1] = 0.0
        theta = np.zeros(d + 1)
        obj = self._objective(Xb, y, theta)
        it = 0
        while True:
            p = _sigmoid(Xb @ theta)
            grad = Xb.T @ (p - y) / n + penalty * theta
            gnorm = float(np.linalg.norm(grad))
            if gnorm <= self.tol or it >= self.max_iter:
                break
            hess = (Xb * (p * (1 - p))[:, None]).T @ Xb / n + np.diag(penalty)
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess, grad, rcond=None)[0]
            # backtracking keeps every step a descent step
            t = 1.0
            while True:
                cand = theta - t * step
                cand_obj = self._objective(Xb, y, cand)
                if cand_obj <= obj - 1e-4 * t * float(grad @ step) or t < 1e-10:
                    break
                t *= 0.5
            theta, obj = cand, cand_obj
            it += 1
        self.coef_ = theta[:-1]
        self.intercept_ = float(theta[-1])
        self.n_iter_ = it
        self.grad_norm_ = gnorm
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return ((X - self.mean_) / self.std_) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(np.int64)

    def loss(self, X, y):
        """Training objective at the fitted parameters."""
        X, y = check_X_y(X, y, dtype=np.float64)
        Xb = np.hstack([(X - self.mean_) / self.std_, np.ones((len(X), 1))])
        return self._objective(Xb, np.asarray(y, dtype=np.float64), np.append(self.coef_, self.intercept_))

    @classmethod
    def from_parameters(cls, coef, intercept, mean=None, std=None, **params):
        """A filter with given parameters (no training)."""
        coef = np.asarray(coef, dtype=np.float64)
        model = cls(**params)
        model.classes_ = np.array([0, 1])
        model.n_features_in_ = len(coef)
        model.coef_ = coef
        model.intercept_ = float(intercept)
        model.mean_ = np.zeros(len(coef)) if mean is None else np.asarray(mean, dtype=np.float64)
        model.std_ = np.ones(len(coef)) if std is None else np.asarray(std, dtype=np.float64)
        model.n_iter_ = 0
        model.grad_norm_ = float("nan")
        model.n_train_ = 0
        model.degenerate_ = False
        return model

    def to_bytes(self):
        check_is_fitted(self, "coef_")
        d = self.n_features_in_
        meta = [self.l2, self.tol, self.max_iter, self.n_iter_, self.grad_norm_, self.n_train_, float(self.degenerate_)]
        body = np.concatenate([self.coef_, [self.intercept_], self.mean_, self.std_, meta]).astype("<f8")
        return _FILTER_MAGIC + struct.pack("<BII", _FILTER_VERSION, d, len(meta)) + body.tobytes()

    @classmethod
    def from_bytes(cls, data):
        head = struct.Struct("<4sBII")
        if len(data) < head.size:
            raise FormatError("filter file too short")
        magic, version, d, n_meta = head.unpack_from(data)
        if magic != _FILTER_MAGIC:
            raise FormatError("bad magic: not a filter file")
        if version != _FILTER_VERSION:
            raise FormatError(f"unsupported filter file version {version}")
        body = np.frombuffer(data, dtype="<f8", offset=head.size)
        if len(body) != 3 * d + 1 + n_meta:
            raise FormatError("filter file has the wrong length")
        l2, tol, max_iter, n_iter, grad_norm, n_train, degenerate = body[3 * d + 1 :][:7]
        model = cls.from_parameters(body[:d], body[d], body[d + 1 : 2 * d + 1], body[2 * d + 1 : 3 * d + 1],
                                    l2=float(l2), tol=float(tol), max_iter=int(max_iter))
        model.n_iter_ = int(n_iter)
        model.grad_norm_ = float(grad_norm)
        model.n_train_ = int(n_train)
        model.degenerate_ = bool(degenerate)
        return model

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def predict_confidence(model, features):
    """``g(phi)``: probability that the prediction behind ``features`` is correct."""
    return float(model.predict_proba(np.asarray(features, dtype=np.float64).reshape(1, -1))[0, 1])


def first_crossing(confidences, tau):
    """1-based index of the first confidence ``>= tau``; the last index if none."""
    ps = np.asarray(confidences, dtype=np.float64)
    if ps.size == 0:
        raise ValueError("no decoding levels")
    hit = np.flatnonzero(ps >= tau)
    return int(hit[0]) + 1 if hit.size else len(ps)


def resolve_levels(stream, levels=10, kind="checkpoints"):
    """Absolute byte budgets for decoding levels.

    ``levels`` is a level count (evenly spaced over the stream's cut points,
    see ``kind``) or an explicit ascending list of budgets in any form that
    :func:`resolve_budget` accepts.
    """
    if isinstance(levels, (int, np.integer)):
        if levels < 1:
            raise ValueError("need at least one decoding level")
        budgets = stream.level_budgets(int(levels), kind)
    else:
        budgets = [resolve_budget(stream, b) for b in levels]
    if not budgets:
        raise ValueError("empty level list")
    if any(b2 < b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("levels must be ascending")
    return budgets


@dataclass(frozen=True)
class TraceRow:
    sample_id: str
    level: int
    bytes: int
    p: float
    pred: int
    stop: bool


@dataclass
class AdaptiveResult:
    prediction: int
    level: int
    bytes: int
    confidence: float
    trace: list = field(repr=False)


def adaptive_decode(stream, classifier, model, tau, levels=10, kind="checkpoints", sample_id="0", group_ranks=None):
    """Decode level by level until the filter's confidence reaches ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if isinstance(stream, (bytes, bytearray, memoryview)):
        stream = ProgressiveBitstream.from_bytes(stream)
    budgets = resolve_levels(stream, levels, kind)
    trace = []
    for level, budget in enumerate(budgets, start=1):
        latent = decode(stream, budget, group_ranks).latent
        z = classifier(latent)
        pred = int(np.argmax(z))
        p = predict_confidence(model, extract_features(z))
        stop = p >= tau or level == len(budgets)
        trace.append(TraceRow(str(sample_id), level, int(budget), p, pred, stop))
        if stop:
            return AdaptiveResult(pred, level, int(budget), p, trace)


def write_trace(path, rows):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "level", "bytes", "p", "pred", "stop"])
        for r in rows:
            writer.writerow([r.sample_id, r.level, r.bytes, repr(r.p), r.pred, int(r.stop)])


def n_threads():
    """Worker count from ``PICM_THREADS`` (default: all cores)."""
    value = os.environ.get("PICM_THREADS")
    if value is None:
        return os.cpu_count() or 1
    n = int(value)
    if n < 1:
        raise ValueError("PICM_THREADS must be a positive integer")
    return n


@dataclass
class LevelProfile:
    """Classifier outputs of one stream at every decoding level."""

    sample_id: str
    label: int
    budgets: list
    logits: np.ndarray

    @property
    def predictions(self):
        return np.argmax(self.logits, axis=1)

    @property
    def correct(self):
        return (self.predictions == self.label).astype(np.int64)

    def features(self):
        return np.vstack([extract_features(z) for z in self.logits])


def level_profile(stream, classifier, levels=10, kind="checkpoints", label=None, sample_id="0", group_ranks=None):
    """Decode ``stream`` at every level and record the classifier's logits.

    Without ``label`` the ground truth is the classifier's prediction on the
    full decode.
    """
    budgets = resolve_levels(stream, levels, kind)
    logits = np.vstack([classifier(decode(stream, b, group_ranks).latent) for b in budgets])
    if label is None:
        label = int(np.argmax(classifier(decode(stream, "full", group_ranks).latent)))
    return LevelProfile(str(sample_id), int(label), budgets, logits)


def _as_stream(item, codec_params):
    if isinstance(item, ProgressiveBitstream):
        return item
    if isinstance(item, (bytes, bytearray)):
        return ProgressiveBitstream.from_bytes(item)
    return encode(item, **codec_params)


@dataclass
class TrainingSet:
    X: np.ndarray
    s: np.ndarray
    sample: np.ndarray
    level: np.ndarray
    bytes: np.ndarray
    profiles: list = field(repr=False)

    def __len__(self):
        return len(self.s)


def build_profiles(items, classifier, levels=10, kind="checkpoints", labels=None, codec_params=None, threads=None):
    """:func:`level_profile` for many grids or streams, in parallel."""
    codec_params = dict(codec_params or {})
    items = list(items)
    labels = [None] * len(items) if labels is None else list(labels)
    if len(labels) != len(items):
        raise ValueError(f"{len(items)} inputs but {len(labels)} labels")

    def work(i):
        stream = _as_stream(items[i], codec_params)
        return level_profile(stream, classifier, levels, kind, labels[i], sample_id=str(i))

    workers = threads or n_threads()
    if workers == 1:
        return [work(i) for i in range(len(items))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, range(len(items))))


def training_set(profiles):
    X = np.vstack([p.features() for p in profiles])
    s = np.concatenate([p.correct for p in profiles])
    sample = np.concatenate([np.full(len(p.budgets), i) for i, p in enumerate(profiles)])
    level = np.concatenate([np.arange(1, len(p.budgets) + 1) for p in profiles])
    nbytes = np.concatenate([p.budgets for p in profiles]).astype(np.int64)
    return TrainingSet(X, s, sample, level, nbytes, profiles)


def build_training_set(items, classifier, levels=10, kind="checkpoints", labels=None, codec_params=None, threads=None):
    """Feature rows and correctness labels for every (sample, level) pair."""
    return training_set(build_profiles(items, classifier, levels, kind, labels, codec_params, threads))


def stop_decisions(profiles, model, tau):
    """Apply the first-crossing rule to recorded profiles.

    Returns arrays ``(level, bytes, p, correct)`` per sample, identical to
    what :func:`adaptive_decode` would produce on the same streams.
    """
    out = []
    for prof in profiles:
        ps = model.predict_proba(prof.features())[:, 1]
        k = first_crossing(ps, tau)
        out.append((k, prof.budgets[k - 1], ps[k - 1], prof.correct[k - 1]))
    arr = np.array(out, dtype=np.float64).reshape(-1, 4)
    return arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2], arr[:, 3].astype(np.int64)


class AdaptiveDecodingController(BaseEstimator):
    """Trains the confidence filter on encoded samples and decodes adaptively.

    ``fit`` runs the training loop over grids (encoded with ``strategy``) or
    ready-made streams; ``decide`` runs threshold-stopped decoding on one
    stream.
    """

    def __init__(self, classifier, tau=0.5, n_levels=10, level_kind="checkpoints", strategy="expvar",
                 checkpoints=DEFAULT_CHECKPOINTS, l2=1e-4):
        self.classifier = classifier
        self.tau = tau
        self.n_levels = n_levels
        self.level_kind = level_kind
        self.strategy = strategy
        self.checkpoints = checkpoints
        self.l2 = l2

    def _codec_params(self):
        return {"strategy": self.strategy, "checkpoints": self.checkpoints}

    def fit(self, items, labels=None):
        self.training_set_ = build_training_set(items, self.classifier, self.n_levels, self.level_kind, labels,
                                                self._codec_params())
        self.filter_ = ConfidenceFilter(l2=self.l2).fit(self.training_set_.X, self.training_set_.s)
        return self

    def decide(self, stream, sample_id="0", tau=None):
        check_is_fitted(self, "filter_")
        tau = self.tau if tau is None else tau
        return adaptive_decode(stream, self.classifier, self.filter_, tau, self.n_levels, self.level_kind, sample_id)

    def predict(self, streams):
        return np.array([self.decide(s, str(i)).prediction for i, s in enumerate(streams)])


def profiles_from_records(records):
    """Group :class:`~picm.oracle.LogitRecord` rows into level profiles.

    Byte budgets are unknown for externally computed logits and are recorded
    as -1.
    """
    from .oracle import group_by_sample

    profiles = []
    for sample_id, rows in group_by_sample(records):
        labels = {r.label for r in rows}
        if len(labels) != 1:
            raise ValueError(f"sample {sample_id!r} has more than one label")
        profiles.append(LevelProfile(sample_id, rows[0].label, [-1] * len(rows), np.vstack([r.logits for r in rows])))
    return profiles
