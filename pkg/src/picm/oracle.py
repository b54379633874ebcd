"""Downstream classifiers producing logits from reconstructed latents.

:class:`SyntheticClassifier` is a seeded linear head used for desk-scale
experiments. Real models plug in through the logits CSV bridge::

    sample_id,level,label,z0,z1,...,z{K-1}

one row per (sample, decoding level), levels contiguous and ascending within
each sample.
"""

import csv
from dataclasses import dataclass
from itertools import groupby

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import SchemaError


class SyntheticClassifier(ClassifierMixin, BaseEstimator):
    """Linear head ``z = W x + b`` with weights drawn once from ``seed``.

    Ground truth for a latent is defined as the prediction on its lossless
    reconstruction (see :meth:`label_for`), so full decoding is always
    correct and any loss of accuracy comes from the codec alone.
    """

    def __init__(self, n_features, n_classes=10, seed=0, gain=1.0):
        self.n_features = n_features
        self.n_classes = n_classes
        self.seed = seed
        self.gain = gain

    def _weights(self):
        if not hasattr(self, "_w"):
            rng = np.random.default_rng([int(self.seed), int(self.n_features), int(self.n_classes)])
            self._w = rng.standard_normal((self.n_classes, self.n_features)) * (self.gain / np.sqrt(self.n_features))
            self._b = rng.standard_normal(self.n_classes) * 0.1
        return self._w, self._b

    @property
    def classes_(self):
        return np.arange(self.n_classes)

    def fit(self, X=None, y=None):
        self._weights()
        return self

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim != 2 or X.shape[-1] != self.n_features or X.size == self.n_features
        X = X.reshape(1, -1) if single else X
        if X.shape[1] != self.n_features:
            raise ValueError(f"classifier expects {self.n_features} features, got {X.shape[1]}")
        w, b = self._weights()
        z = X @ w.T + b
        return z[0] if single else z

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=-1)

    def __call__(self, latent):
        return self.decision_function(np.ravel(latent))

    def label_for(self, clean_latent):
        return int(np.argmax(self(clean_latent)))


def cross_entropy_oracle(classifier, label):
    """``latent -> -CE(label)``: confidence oracle for the oracle strategies."""

    def confidence(latent):
        z = classifier(latent)
        z = z - z.max()
        return float(z[label] - np.log(np.exp(z).sum()))

    return confidence


@dataclass(frozen=True)
class LogitRecord:
    sample_id: str
    level: int
    logits: np.ndarray
    label: int

    @property
    def prediction(self):
        return int(np.argmax(self.logits))

    @property
    def correct(self):
        return self.prediction == self.label


def _parse_header(header, n_classes):
    if header[:3] != ["sample_id", "level", "label"]:
        raise SchemaError(f"logits CSV header must start with sample_id,level,label; got {','.join(header[:3])}")
    k = len(header) - 3
    if header[3:] != [f"z{i}" for i in range(k)]:
        raise SchemaError("logit columns must be named z0..z{K-1} in order")
    if k < 2:
        raise SchemaError(f"need at least 2 logit columns, got {k}")
    if n_classes is not None and k != n_classes:
        raise SchemaError(f"expected {n_classes} classes, file has {k}")
    return k


def load_logits(path, n_classes=None):
    """Stream :class:`LogitRecord` objects from a logits CSV, validating as it goes."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        k = _parse_header([h.strip() for h in header], n_classes)

        def rows():
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != k + 3:
                    raise SchemaError(f"{path}:{lineno}: expected {k + 3} fields, got {len(row)}")
                try:
                    logits = np.array([float(v) for v in row[3:]])
                    record = LogitRecord(row[0], int(row[1]), logits, int(row[2]))
                except ValueError as exc:
                    raise SchemaError(f"{path}:{lineno}: {exc}") from None
                if not np.all(np.isfinite(logits)):
                    raise SchemaError(f"{path}:{lineno}: non-finite logit")
                yield lineno, record

        seen = set()
        for sample_id, group in groupby(rows(), key=lambda item: item[1].sample_id):
            if sample_id in seen:
                raise SchemaError(f"{path}: rows of sample {sample_id!r} are not contiguous")
            seen.add(sample_id)
            expected = None
            for lineno, record in group:
                if expected is not None and record.level != expected:
                    raise SchemaError(
                        f"{path}:{lineno}: sample {sample_id!r} level {record.level} breaks the contiguous ascending run (expected {expected})"
                    )
                expected = record.level + 1
                yield record


def write_logits(path, records):
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    k = len(records[0].logits)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "level", "label"] + [f"z{i}" for i in range(k)])
        for r in records:
            if len(r.logits) != k:
                raise SchemaError("records disagree on the number of classes")
            writer.writerow([r.sample_id, r.level, r.label] + [repr(float(v)) for v in r.logits])


def group_by_sample(records):
    """Yield ``(sample_id, [records...])`` in file order."""
    for sample_id, group in groupby(records, key=lambda r: r.sample_id):
        yield sample_id, list(group)
