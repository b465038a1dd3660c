"""Quadratic weighted kappa and friends."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UndefinedMetricError, ValidationError


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts, rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DimensionError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise ValidationError("confusion counts must be non-negative")
        if c.sum() < 1:
            raise ValidationError("confusion matrix is empty")
        object.__setattr__(self, "counts", c)

    @property
    def K(self):
        return self.counts.shape[0]


def confusion(labels, predictions, K=None):
    y = np.asarray(labels).ravel()
    p = np.asarray(predictions).ravel()
    if y.size != p.size:
        raise DimensionError(f"{y.size} labels vs {p.size} predictions")
    if K is None:
        ks = {getattr(labels, "K", None), getattr(predictions, "K", None)} - {None}
        if len(ks) > 1:
            raise ValidationError(f"labels and predictions disagree on K: {sorted(ks)}")
        K = ks.pop() if ks else int(max(y.max(initial=0), p.max(initial=0))) + 1
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (y, p), 1)
    return ConfusionMatrix(counts)


def quadratic_weights(K):
    i = np.arange(K)
    return (i[:, None] - i[None, :]) ** 2 / (K - 1) ** 2


def qwk(conf):
    """Cohen's kappa with quadratic weights (i-j)^2/(K-1)^2.

    Raises UndefinedMetricError when the chance-disagreement term is zero,
    e.g. both raters constant on the same class.
    """
    counts = conf.counts if isinstance(conf, ConfusionMatrix) else ConfusionMatrix(conf).counts
    K = counts.shape[0]
    if K < 2:
        raise UndefinedMetricError("kappa needs at least 2 classes")
    O = counts / counts.sum()
    E = np.outer(O.sum(axis=1), O.sum(axis=0))
    w = quadratic_weights(K)
    den = float((w * E).sum())
    if den == 0.0:
        raise UndefinedMetricError("kappa undefined: expected disagreement is zero")
    return 1.0 - float((w * O).sum()) / den


def accuracy(conf):
    counts = conf.counts if isinstance(conf, ConfusionMatrix) else np.asarray(conf)
    return float(np.trace(counts) / counts.sum())
